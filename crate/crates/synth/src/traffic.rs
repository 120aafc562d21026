//! Synthetic AIS traffic with a heavy-tailed per-ship occurrence distribution.
//!
//! Occurrence counts follow a discrete power law, drawn with the rounding
//! approximation `x = floor((xmin - 1/2) (1 - u)^(-1/(alpha - 1)) + 1/2)`.
//! Each ship is then placed in exactly that many distinct windows, with
//! pulses inside the owning hydrophone's fence, so the aligned occurrence
//! histogram equals the drawn counts as long as fences do not overlap.

use std::collections::BTreeMap;

use pamcurate::geo::fence_of;
use pamcurate::model::WINDOW_SECONDS;
use pamcurate::{AisPulse, DeploymentConfig, GeoPoint, Mmsi};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{spec_err, Result};

/// First mmsi handed out; ships are numbered consecutively from here.
pub const MMSI_BASE: u32 = 200_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub ships: usize,
    pub exponent: f64,
    pub min_count: u64,
    pub max_count: u64,
    /// Extra pulses that must not align: outside every fence, or inside a
    /// fence while nothing was recording.
    pub stray_pulses: usize,
    pub seed: u64,
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent.is_finite() && self.exponent > 1.0) {
            return spec_err("power-law exponent must exceed 1");
        }
        if self.min_count == 0 || self.max_count < self.min_count {
            return spec_err("need 1 <= min_count <= max_count");
        }
        if self.ships as u64 > 999_999_999 - MMSI_BASE as u64 {
            return spec_err("too many ships for the mmsi range");
        }
        Ok(())
    }
}

/// Draws one occurrence count per ship, rejecting draws above `max_count`.
pub fn sample_occurrences(spec: &TrafficSpec) -> Result<Vec<u64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(draw_counts(spec, &mut rng))
}

fn draw_counts(spec: &TrafficSpec, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let shift = spec.min_count as f64 - 0.5;
    let power = -1.0 / (spec.exponent - 1.0);
    (0..spec.ships)
        .map(|_| loop {
            let u: f64 = rng.random();
            let x = (shift * (1.0 - u).powf(power) + 0.5).floor();
            if x.is_finite() && x <= spec.max_count as f64 {
                break (x as u64).max(spec.min_count);
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    pub pulses: Vec<AisPulse>,
    /// Ground-truth number of distinct windows per ship.
    pub counts: BTreeMap<Mmsi, u64>,
}

struct Slot {
    hydrophone: usize,
    time: i64,
}

/// Generates traffic against a deployment. Hydrophone fences (at `side_km`)
/// are assumed not to overlap.
pub fn gen_traffic(spec: &TrafficSpec, config: &DeploymentConfig, side_km: f64) -> Result<Traffic> {
    spec.validate()?;
    let fences = config
        .hydrophones
        .iter()
        .map(|h| fence_of(h, side_km))
        .collect::<pamcurate::Result<Vec<_>>>()?;
    let mut slots = Vec::new();
    for (hi, h) in config.hydrophones.iter().enumerate() {
        for r in &h.recordings {
            for w in 0..r.window_count() {
                slots.push(Slot {
                    hydrophone: hi,
                    time: r.start + (w * WINDOW_SECONDS) as i64,
                });
            }
        }
    }
    if (spec.max_count as usize) > slots.len() {
        return spec_err(format!(
            "max_count {} exceeds the {} windows in the deployment",
            spec.max_count,
            slots.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drawn = draw_counts(spec, &mut rng);
    let inside = |rng: &mut ChaCha8Rng, hi: usize| -> Result<GeoPoint> {
        let f = &fences[hi];
        let c = config.hydrophones[hi].location;
        let lat = c.lat() + rng.random_range(-0.9..0.9) * f.lat_span();
        let lon = c.lon() + rng.random_range(-0.9..0.9) * f.lon_span();
        Ok(GeoPoint::new(lat, lon)?)
    };

    let mut pulses = Vec::new();
    let mut counts = BTreeMap::new();
    for (i, &c) in drawn.iter().enumerate() {
        let mmsi = Mmsi(MMSI_BASE + i as u32);
        counts.insert(mmsi, c);
        for s in index::sample(&mut rng, slots.len(), c as usize) {
            let slot = &slots[s];
            for _ in 0..rng.random_range(1..=3) {
                pulses.push(AisPulse {
                    mmsi,
                    time: slot.time + rng.random_range(0..WINDOW_SECONDS as i64),
                    position: inside(&mut rng, slot.hydrophone)?,
                    vessel_type: Some(rng.random_range(30..90)),
                });
            }
        }
    }

    let earliest = config
        .hydrophones
        .iter()
        .flat_map(|h| &h.recordings)
        .map(|r| r.start)
        .min();
    for k in 0..spec.stray_pulses {
        let mmsi = Mmsi(MMSI_BASE + rng.random_range(0..spec.ships.max(1)) as u32);
        let hi = rng.random_range(0..config.hydrophones.len().max(1));
        let pulse = match (k % 2, earliest) {
            // in a fence, before any recording started
            (0, Some(t0)) if !config.hydrophones.is_empty() => AisPulse {
                mmsi,
                time: t0 - 1 - rng.random_range(0..86_400),
                position: inside(&mut rng, hi)?,
                vessel_type: None,
            },
            // far from every fence, during a recording
            _ => {
                let time = slots.get(rng.random_range(0..slots.len().max(1))).map_or(0, |s| s.time);
                let c = config.hydrophones.get(hi).map_or(GeoPoint::new(0.0, 0.0)?, |h| h.location);
                let lat = if c.lat() > 0.0 { c.lat() - 0.25 } else { c.lat() + 0.25 };
                AisPulse {
                    mmsi,
                    time,
                    position: GeoPoint::new(lat, c.lon())?,
                    vessel_type: None,
                }
            }
        };
        pulses.push(pulse);
    }
    Ok(Traffic { pulses, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::tail_exponent_mle;

    #[test]
    fn counts_respect_bounds() {
        let spec = TrafficSpec {
            ships: 5000,
            exponent: 1.8,
            min_count: 2,
            max_count: 40,
            stray_pulses: 0,
            seed: 9,
        };
        let c = sample_occurrences(&spec).unwrap();
        assert_eq!(c.len(), 5000);
        assert!(c.iter().all(|&x| (2..=40).contains(&x)));
        assert!(c.iter().any(|&x| x == 2) && c.iter().any(|&x| x > 20));
    }

    #[test]
    fn exponent_is_recoverable() {
        let spec = TrafficSpec {
            ships: 10_000,
            exponent: 2.0,
            min_count: 5,
            max_count: u64::MAX / 4,
            stray_pulses: 0,
            seed: 21,
        };
        let c = sample_occurrences(&spec).unwrap();
        let alpha = tail_exponent_mle(&c, 5);
        assert!((alpha - 2.0).abs() < 0.2, "alpha hat {alpha}");
    }

    #[test]
    fn invalid_specs() {
        let mut spec = TrafficSpec {
            ships: 1,
            exponent: 1.0,
            min_count: 1,
            max_count: 2,
            stray_pulses: 0,
            seed: 0,
        };
        assert!(sample_occurrences(&spec).is_err());
        spec.exponent = 2.0;
        spec.max_count = 0;
        assert!(sample_occurrences(&spec).is_err());
    }
}
