use pamcurate::ais::histogram;
use pamcurate::geo::{align, load_ais_csv, DEFAULT_SIDE_KM};
use pamcurate::geo::PulseRecord;
use pamcurate::shard::read_shard;
use pamcurate_synth::fixtures::{deployment, window_embeddings, write_pulses_csv, write_shards};
use pamcurate_synth::{gen_traffic, MixtureSpec, TrafficSpec};

#[test]
fn aligned_histogram_matches_ground_truth() {
    let config = deployment(3, 2, 3600);
    let spec = TrafficSpec {
        ships: 200,
        exponent: 1.7,
        min_count: 1,
        max_count: 300,
        stray_pulses: 50,
        seed: 4,
    };
    let traffic = gen_traffic(&spec, &config, DEFAULT_SIDE_KM).unwrap();
    let records: Vec<PulseRecord> = traffic.pulses.iter().map(PulseRecord::from).collect();
    let a = align(&records, &config, DEFAULT_SIDE_KM).unwrap();
    let hist = histogram(&a.windows);
    assert_eq!(hist.counts(), &traffic.counts);
    assert_eq!(a.pulses.len() + 50, {
        let mut all: Vec<_> = traffic.pulses.clone();
        all.sort_by_key(|p| (p.time, p.mmsi, p.position.lat().to_bits(), p.position.lon().to_bits(), p.vessel_type));
        all.dedup();
        all.len()
    });
}

#[test]
fn csv_and_shard_fixtures_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = deployment(2, 1, 600);
    let spec = TrafficSpec {
        ships: 10,
        exponent: 2.0,
        min_count: 1,
        max_count: 20,
        stray_pulses: 4,
        seed: 1,
    };
    let traffic = gen_traffic(&spec, &config, DEFAULT_SIDE_KM).unwrap();
    let csv = dir.path().join("ais.csv");
    write_pulses_csv(&traffic.pulses, &csv).unwrap();
    let (rows, rejects) = load_ais_csv(&csv).unwrap();
    assert_eq!(rows.len(), traffic.pulses.len());
    assert_eq!(rejects.malformed_rows, 0);

    let mix = MixtureSpec::separated(vec![1.0, 1.0], 4, 3.0, 0.2, 2).unwrap();
    let recs = window_embeddings(&config, &mix).unwrap();
    assert_eq!(recs.len(), 120);
    let paths = write_shards(&recs, 4, 50, dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let back: Vec<_> = paths
        .iter()
        .flat_map(|p| {
            let s = read_shard(p).unwrap();
            s.records().map(|(id, v)| (id, v.to_vec())).collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(back, recs);
}
