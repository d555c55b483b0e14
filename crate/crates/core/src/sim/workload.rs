use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::platform::Micros;

use super::scenario::{Background, Workload};

/// One process launch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedArrival {
    pub time: Micros,
    pub app_id: String,
    /// Index of the wave that launched it, for periodic workloads.
    pub wave: Option<u32>,
    /// Overrides the profile's `calls_per_run`.
    pub calls: Option<u32>,
    /// The process is stopped this long after it arrives.
    pub time_limit: Option<Micros>,
    /// Counted in the metrics; background apps are not.
    pub measured: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArrivalSchedule {
    /// Sorted by time, then by generation order.
    pub arrivals: Vec<PlannedArrival>,
    pub wave_starts: Vec<Micros>,
}

impl ArrivalSchedule {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    fn push_now(&mut self, app: &str, measured: bool) {
        self.arrivals.push(PlannedArrival {
            time: Micros::ZERO,
            app_id: app.to_string(),
            wave: None,
            calls: None,
            time_limit: None,
            measured,
        });
    }

    fn push_waves(
        &mut self,
        rng: &mut ChaCha8Rng,
        waves: u32,
        per_wave: u32,
        interval: Micros,
        pool: &[String],
        measured: bool,
    ) {
        for w in 0..waves {
            let t = Micros(interval.0 * u64::from(w));
            self.wave_starts.push(t);
            for _ in 0..per_wave {
                let app = pool.choose(rng).expect("non-empty pool");
                self.arrivals.push(PlannedArrival {
                    time: t,
                    app_id: app.clone(),
                    wave: Some(w),
                    calls: None,
                    time_limit: None,
                    measured,
                });
            }
        }
    }
}

/// Expands a workload into process launches. The same seed always gives the
/// same schedule. A mix sweep yields nothing; expand it into points first.
pub fn gen_workload(workload: &Workload, seed: u64) -> ArrivalSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ArrivalSchedule::default();
    match workload {
        Workload::FixedSet { apps } => apps.iter().for_each(|a| s.push_now(a, true)),
        Workload::RandomSet {
            size,
            pool,
            with_replacement,
        } => {
            if pool.is_empty() {
                return s;
            }
            if *with_replacement {
                for _ in 0..*size {
                    let app = pool.choose(&mut rng).expect("non-empty pool");
                    s.push_now(app, true);
                }
            } else {
                let picked: Vec<&String> = pool.choose_multiple(&mut rng, *size as usize).collect();
                picked.into_iter().for_each(|a| s.push_now(a, true));
            }
        }
        Workload::Periodic {
            waves,
            apps_per_wave,
            interval,
            pool,
        } => {
            if !pool.is_empty() {
                s.push_waves(&mut rng, *waves, *apps_per_wave, *interval, pool, true);
            }
        }
        Workload::Throughput {
            app,
            images,
            duration,
        } => s.arrivals.push(PlannedArrival {
            time: Micros::ZERO,
            app_id: app.clone(),
            wave: None,
            calls: Some(*images),
            time_limit: Some(*duration),
            measured: true,
        }),
        Workload::Mix {
            slow,
            fast,
            set_size,
            slow_count,
        } => {
            for i in 0..*set_size {
                s.push_now(if i < *slow_count { slow } else { fast }, true);
            }
        }
        Workload::MixSweep { .. } => {}
    }
    s
}

/// Background apps that go through the policy; pure occupancy is handled by
/// the engine directly.
pub(crate) fn gen_background(background: &Background, seed: u64) -> ArrivalSchedule {
    let mut s = ArrivalSchedule::default();
    if let Background::Periodic {
        waves,
        apps_per_wave,
        interval,
        pool,
    } = background
    {
        // A separate stream so the measured draw does not depend on the background.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6261_636b_6772_6e64);
        if !pool.is_empty() {
            s.push_waves(&mut rng, *waves, *apps_per_wave, *interval, pool, false);
        }
    }
    s
}

/// Merges two schedules, keeping each one's order among equal times.
pub(crate) fn merge(a: ArrivalSchedule, b: ArrivalSchedule) -> ArrivalSchedule {
    let mut arrivals = a.arrivals;
    arrivals.extend(b.arrivals);
    arrivals.sort_by_key(|x| x.time);
    let mut wave_starts = a.wave_starts;
    wave_starts.extend(b.wave_starts);
    wave_starts.sort();
    wave_starts.dedup();
    ArrivalSchedule {
        arrivals,
        wave_starts,
    }
}
