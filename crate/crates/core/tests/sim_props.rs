use std::collections::BTreeMap;

use bikesim::network::StationId;
use bikesim::scenario::{generate_synthetic, Scenario, SyntheticSpec};
use bikesim::sim::{Event, Outcome, RunResult, SimConfig};
use proptest::prelude::*;

fn small_scenario() -> Scenario {
    generate_synthetic(&SyntheticSpec {
        cols: 8,
        rows: 8,
        stations: 14,
        daily_departures: 400.0,
        reference_runs: 0,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn run(s: &Scenario, config: SimConfig, seed: u64) -> RunResult {
    s.simulation(config).unwrap().run(seed, true)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// An informed rider only meets a full dock if someone else docked there after it chose it.
fn check_informed_full(events: &[Event]) -> Result<(), String> {
    let mut informed = BTreeMap::new();
    // biker -> (station chosen, event index of the choice)
    let mut choice: BTreeMap<u64, (StationId, usize)> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        match *e {
            Event::Enter {
                biker,
                informed: inf,
                ..
            }
            | Event::Request {
                biker,
                informed: inf,
                ..
            } => {
                informed.insert(biker, inf);
            }
            Event::Start {
                biker,
                target_station: Some(s),
                ..
            }
            | Event::Redirect { biker, to: s, .. } => {
                choice.insert(biker, (s, i));
            }
            Event::Full {
                biker, station, to, ..
            } => {
                if informed[&biker] {
                    if let Some((chosen, at)) = choice.get(&biker).copied() {
                        if chosen == station {
                            let filled = events[at..i].iter().any(|e| {
                                matches!(*e, Event::Drop { station: s, biker: other, .. } if s == station && other != biker)
                            });
                            if !filled {
                                return Err(format!("informed biker {biker} met full station {station} it chose at event {at}"));
                            }
                        }
                    }
                }
                match to {
                    Some(s) => choice.insert(biker, (s, i)),
                    None => choice.remove(&biker),
                };
            }
            _ => {}
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn event_log_is_consistent(
        seed in any::<u64>(),
        p_info in 0.0..=1.0f64,
        radius in prop::sample::select(vec![100.0, 400.0, 800.0]),
    ) {
        let s = small_scenario();
        let config = SimConfig { p_info, walk_radius_m: radius, ..s.config.clone() };
        let r = run(&s, config, seed);
        let events = r.events.as_deref().unwrap();

        check_informed_full(events).map_err(TestCaseError::fail)?;

        let mut rerouted = BTreeMap::new();
        let (mut adverse, mut finished, mut ratio_sum, mut ratio_n) = (0usize, 0usize, 0.0, 0usize);
        for e in events {
            match *e {
                Event::Redirect { biker, .. } | Event::Full { biker, .. } => {
                    rerouted.insert(biker, true);
                }
                Event::Drop { biker, adverse: a, d_th, d_r, .. } | Event::Exit { biker, adverse: a, d_th, d_r, .. } => {
                    prop_assert!(d_r >= d_th - 1e-9 * d_th.max(1.0), "biker {} rode {} < {}", biker, d_r, d_th);
                    if !rerouted.contains_key(&biker) {
                        prop_assert!(close(d_r, d_th), "biker {} rode {} on a direct path of {}", biker, d_r, d_th);
                    }
                    finished += 1;
                    adverse += a as usize;
                    if d_th > 0.0 {
                        ratio_sum += d_r / d_th;
                        ratio_n += 1;
                    }
                }
                Event::Abandon { .. } => {
                    finished += 1;
                    adverse += 1;
                }
                Event::Unfinished { adverse: a, .. } => {
                    finished += 1;
                    adverse += a as usize;
                }
                _ => {}
            }
        }
        prop_assert_eq!(finished, r.records.len());
        prop_assert!(close(r.aggregates.adverse_rate, adverse as f64 / finished as f64));
        prop_assert!(close(r.aggregates.detour, ratio_sum / ratio_n as f64));
        prop_assert_eq!(r.aggregates.detour_included, ratio_n);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>()) {
        let s = small_scenario();
        let a = run(&s, s.config.clone(), seed);
        let b = run(&s, s.config.clone(), seed);
        prop_assert_eq!(a.events, b.events);
        prop_assert_eq!(a.occupancy, b.occupancy);
        prop_assert_eq!(a.series, b.series);
    }
}

#[test]
fn no_outbound_requests_without_outbound_share() {
    let s = small_scenario();
    let r = run(
        &s,
        SimConfig {
            p_it: 0.0,
            ..s.config.clone()
        },
        5,
    );
    let requests: Vec<bool> = r
        .events
        .unwrap()
        .iter()
        .filter_map(|e| match *e {
            Event::Request { outbound, .. } => Some(outbound),
            _ => None,
        })
        .collect();
    assert!(!requests.is_empty());
    assert!(requests.iter().all(|&o| o));
}

#[test]
fn everyone_internal_never_exits() {
    let s = small_scenario();
    let r = run(
        &s,
        SimConfig {
            p_it: 1.0,
            ..s.config.clone()
        },
        5,
    );
    let departures = r
        .events
        .as_ref()
        .unwrap()
        .iter()
        .filter(|e| matches!(e, Event::Request { outbound: true, .. }))
        .count();
    assert_eq!(departures, 0);
    assert!(r
        .records
        .iter()
        .all(|t| t.outcome != Outcome::Exited && !t.outbound));
}

#[test]
fn informed_riders_see_fewer_adverse_events() {
    let s = small_scenario();
    let rate = |p_info| {
        (0..10)
            .map(|seed| {
                run(
                    &s,
                    SimConfig {
                        p_info,
                        ..s.config.clone()
                    },
                    seed,
                )
                .aggregates
                .adverse_rate
            })
            .sum::<f64>()
            / 10.0
    };
    assert!(rate(1.0) < rate(0.0));
}
