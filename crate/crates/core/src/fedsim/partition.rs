use rand::seq::SliceRandom;
use rand::Rng;

use super::{ClientState, FedConfig};
use crate::error::{Error, Result};
use crate::features::IdealRanges;
use crate::seed::{self, Stream};
use crate::synthgen::{DailyRecord, UserSeries};

/// Picks which clients are "mostly ideal": `round(ideal_fraction * n_clients)`
/// of them, chosen by a seeded shuffle.
pub fn ideal_client_ids(cfg: &FedConfig, seed: u64) -> Vec<u32> {
    let k = (cfg.ideal_fraction * cfg.n_clients as f64).round() as usize;
    let mut ids: Vec<u32> = (0..cfg.n_clients as u32).collect();
    ids.shuffle(&mut seed::rng(seed, Stream::Partition, 0));
    let mut chosen: Vec<u32> = ids.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Redraws sleep and distance inside their ideal ranges, each independently
/// with probability `p_ideal`. Distance stays a whole number of strides.
fn idealize(day: &mut DailyRecord, stride_km: f64, ranges: &IdealRanges, p_ideal: f64, rng: &mut impl Rng) {
    if rng.random::<f64>() < p_ideal {
        let [lo, hi] = ranges.sleep_hrs;
        day.sleep_hrs = rng.random_range(lo..=hi);
    }
    if rng.random::<f64>() < p_ideal {
        let [lo, hi] = ranges.distance_km;
        // Keep a one-stride margin so rounding to whole steps stays in range.
        let (a, b) = (lo + stride_km, hi - stride_km);
        let target = if a < b {
            rng.random_range(a..=b)
        } else {
            (lo + hi) / 2.0
        };
        day.steps = (target / stride_km).round() as u64;
        day.distance_km = day.steps as f64 * stride_km;
    }
}

/// Turns one user series per client into clients with chronological
/// train/eval splits. `users[k]` becomes client `k`.
pub fn partition_clients(
    users: &[UserSeries],
    cfg: &FedConfig,
    ranges: &IdealRanges,
    seed: u64,
) -> Result<Vec<ClientState>> {
    cfg.validate()?;
    if users.len() < cfg.n_clients {
        return Err(Error::InvalidArgument(format!(
            "{} clients requested but only {} users available",
            cfg.n_clients,
            users.len()
        )));
    }
    let ideal = ideal_client_ids(cfg, seed);
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for (k, user) in users.iter().take(cfg.n_clients).enumerate() {
        if user.records.len() < cfg.days_per_client {
            return Err(Error::InvalidArgument(format!(
                "user {} has {} days, each client needs {}",
                user.profile.user_id,
                user.records.len(),
                cfg.days_per_client
            )));
        }
        let id = k as u32;
        let mostly_ideal = ideal.contains(&id);
        let mut days: Vec<DailyRecord> = user.records[..cfg.days_per_client].to_vec();
        if mostly_ideal {
            let mut rng = seed::rng(seed, Stream::Partition, id as u64 + 1);
            for d in &mut days {
                idealize(d, user.profile.stride_km, ranges, cfg.p_ideal, &mut rng);
            }
        }
        let eval = days.split_off(cfg.train_days);
        clients.push(ClientState::new(id, days, eval, mostly_ideal));
    }
    Ok(clients)
}
