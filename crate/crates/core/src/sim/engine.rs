use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Aggregates, Event, IndicatorSeries, Ledger, Outcome, Route, RunResult, SimConfig, SimError,
    TravelRecord,
};
use crate::demand::DemandModel;
use crate::indicators::{self, HeterogeneityWeights};
use crate::network::{NodeId, StationId, StreetNetwork};

/// Validated, reusable run setup. Each `run` owns its own engine and RNG.
pub struct Simulation<'a> {
    net: &'a StreetNetwork,
    demand: &'a DemandModel,
    config: SimConfig,
    initial: Vec<u32>,
    weights: HeterogeneityWeights<f64>,
    ticks_per_bin: usize,
}

impl<'a> Simulation<'a> {
    /// `initial` lists starting bikes per station in network station order; `None` uses
    /// `config.initial_load_factor`.
    pub fn new(
        net: &'a StreetNetwork,
        demand: &'a DemandModel,
        config: SimConfig,
        initial: Option<Vec<u32>>,
    ) -> Result<Self, SimError> {
        config.check()?;
        if net.stations().len() < 2 {
            return Err(SimError::TooFewStations);
        }
        demand.check_against(net)?;
        let bin_s = demand.bin_seconds();
        if !bin_s.is_multiple_of(config.tau_s) {
            return Err(SimError::TickDoesNotDivideBin {
                tau_s: config.tau_s,
                bin_s,
            });
        }
        let initial = match initial {
            Some(v) => {
                if v.len() != net.stations().len() {
                    return Err(SimError::InitialShape {
                        expected: net.stations().len(),
                        found: v.len(),
                    });
                }
                for (s, &bikes) in net.stations().iter().zip(&v) {
                    if bikes > s.capacity {
                        return Err(SimError::InitialAboveCapacity {
                            station: s.id,
                            bikes,
                            capacity: s.capacity,
                        });
                    }
                }
                v
            }
            None => net
                .stations()
                .iter()
                .map(|s| (config.initial_load_factor * s.capacity as f64).round() as u32)
                .collect(),
        };
        let weights =
            HeterogeneityWeights::new(net.station_distance_matrix(), net.stations().len())?;
        Ok(Self {
            net,
            demand,
            ticks_per_bin: (bin_s / config.tau_s) as usize,
            config,
            initial,
            weights,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn ticks(&self) -> usize {
        self.ticks_per_bin * self.demand.bins()
    }

    pub fn engine(&self, seed: u64, log_events: bool) -> Engine<'_> {
        Engine::new(self, seed, log_events)
    }

    pub fn run(&self, seed: u64, log_events: bool) -> RunResult {
        let mut engine = self.engine(seed, log_events);
        let ticks = self.ticks();
        let mut occupancy = Vec::with_capacity(ticks + 1);
        let mut ledger = Vec::with_capacity(ticks + 1);
        occupancy.push(engine.occupancy.clone());
        ledger.push(engine.ledger());
        for _ in 0..ticks {
            engine.step();
            occupancy.push(engine.occupancy.clone());
            ledger.push(engine.ledger());
        }
        engine.close_day();
        let capacities = engine.capacities.clone();
        let mut mean_load = Vec::with_capacity(occupancy.len());
        let mut heterogeneity = Vec::with_capacity(occupancy.len());
        for row in &occupancy {
            let lf: Vec<f64> = indicators::load_factors(row, &capacities);
            mean_load.push(lf.iter().sum::<f64>() / lf.len() as f64);
            heterogeneity.push(self.weights.eval(&lf));
        }
        let aggregates = aggregate(&engine.records);
        RunResult {
            seed,
            tau_s: self.config.tau_s,
            ticks_per_bin: self.ticks_per_bin,
            station_ids: self.net.station_ids(),
            capacities,
            occupancy,
            ledger,
            series: IndicatorSeries {
                mean_load,
                heterogeneity,
            },
            records: engine.records,
            aggregates,
            events: engine.events,
        }
    }
}

fn aggregate(records: &[TravelRecord]) -> Aggregates {
    let adverse_rate = indicators::adverse_rate::<f64>(records).unwrap_or(0.0);
    let (detour, detour_included, detour_excluded) = match indicators::detour_ratio::<f64>(records)
    {
        Ok(d) => (d.value, d.included, d.excluded),
        Err(_) => (f64::NAN, 0, records.len()),
    };
    Aggregates {
        travels: records.len(),
        adverse_rate,
        detour,
        detour_included,
        detour_excluded,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Goal {
    /// Leave the district at a boundary node.
    Exit(NodeId),
    /// A location inside the district, snapped to a node.
    Point(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Target {
    Exit(NodeId),
    Point(NodeId),
    Station(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    Riding,
    /// Walking to `station` to pick up a bike there.
    Walking {
        station: usize,
    },
    /// Arrived on foot at `station`; tries to take a bike next tick.
    Waiting {
        station: usize,
    },
}

#[derive(Clone, Debug)]
struct Biker {
    id: u64,
    informed: bool,
    goal: Goal,
    mode: Mode,
    route: Route,
    target: Target,
    visited: BTreeSet<StationId>,
    start_tick: u32,
    d_th: f64,
    d_r: f64,
    adverse: bool,
    walked: bool,
    retried_origin: bool,
}

#[derive(Clone, Copy, Debug)]
enum Spawn {
    Entry(usize),
    Departure,
}

/// Mutable state of one run. Advance it with [`Engine::step`].
pub struct Engine<'s> {
    sim: &'s Simulation<'s>,
    rng: ChaCha8Rng,
    tick: usize,
    occupancy: Vec<u32>,
    capacities: Vec<u32>,
    bikers: BTreeMap<u64, Biker>,
    next_id: u64,
    schedule: Vec<Vec<Spawn>>,
    records: Vec<TravelRecord>,
    events: Option<Vec<Event>>,
    entered: u64,
    exited: u64,
    ride_step: f64,
    walk_step: f64,
}

impl<'s> Engine<'s> {
    fn new(sim: &'s Simulation<'s>, seed: u64, log_events: bool) -> Self {
        let tau = sim.config.tau_s as f64;
        Self {
            sim,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            occupancy: sim.initial.clone(),
            capacities: sim.net.stations().iter().map(|s| s.capacity).collect(),
            bikers: BTreeMap::new(),
            next_id: 0,
            schedule: vec![Vec::new(); sim.ticks_per_bin],
            records: Vec::new(),
            events: log_events.then(Vec::new),
            entered: 0,
            exited: 0,
            ride_step: tau * sim.config.mean_speed_mps(),
            walk_step: tau * sim.config.walk_speed_mps(),
        }
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.occupancy
    }

    pub fn records(&self) -> &[TravelRecord] {
        &self.records
    }

    pub fn active_bikers(&self) -> usize {
        self.bikers.len()
    }

    pub fn ledger(&self) -> Ledger {
        Ledger {
            docked: self.occupancy.iter().map(|&b| b as u64).sum(),
            in_transit: self
                .bikers
                .values()
                .filter(|b| b.mode == Mode::Riding)
                .count() as u64,
            entered: self.entered,
            exited: self.exited,
        }
    }

    fn net(&self) -> &'s StreetNetwork {
        self.sim.net
    }

    fn log(&mut self, e: Event) {
        if let Some(events) = &mut self.events {
            events.push(e);
        }
    }

    fn t32(&self) -> u32 {
        self.tick as u32
    }

    /// One tick: travel starts, movement, then arrivals.
    pub fn step(&mut self) {
        self.start_travels();
        self.move_bikers();
        self.finish_or_redirect();
        self.check_bounds();
        self.tick += 1;
    }

    fn check_bounds(&self) {
        debug_assert!(self
            .occupancy
            .iter()
            .zip(&self.capacities)
            .all(|(b, c)| b <= c));
    }

    fn start_travels(&mut self) {
        let tpb = self.sim.ticks_per_bin;
        let bin = self.tick / tpb;
        let demand = self.sim.demand;
        if self.tick.is_multiple_of(tpb) {
            for slot in &mut self.schedule {
                slot.clear();
            }
            let entries = demand.boundary.sample_entries(bin, &mut self.rng);
            for (i, n) in entries.into_iter().enumerate() {
                for _ in 0..n {
                    let at = self.rng.random_range(0..tpb);
                    self.schedule[at].push(Spawn::Entry(i));
                }
            }
            for _ in 0..demand.boundary.sample_departures(bin, &mut self.rng) {
                let at = self.rng.random_range(0..tpb);
                self.schedule[at].push(Spawn::Departure);
            }
        }
        let due = std::mem::take(&mut self.schedule[self.tick % tpb]);
        for spawn in &due {
            match *spawn {
                Spawn::Entry(i) => self.spawn_entry(i, bin),
                Spawn::Departure => self.spawn_departure(bin),
            }
        }
        self.schedule[self.tick % tpb] = due;
        let waiting: Vec<(u64, usize)> = self
            .bikers
            .values()
            .filter_map(|b| match b.mode {
                Mode::Waiting { station } => Some((b.id, station)),
                _ => None,
            })
            .collect();
        for (id, station) in waiting {
            self.activate_walker(id, station);
        }
    }

    fn new_biker(&mut self, informed: bool, goal: Goal, at: NodeId) -> Biker {
        let id = self.next_id;
        self.next_id += 1;
        Biker {
            id,
            informed,
            goal,
            mode: Mode::Riding,
            route: Route::stay(at),
            target: Target::Point(at),
            visited: BTreeSet::new(),
            start_tick: self.t32(),
            d_th: 0.0,
            d_r: 0.0,
            adverse: false,
            walked: false,
            retried_origin: false,
        }
    }

    fn spawn_entry(&mut self, entry: usize, bin: usize) {
        let net = self.net();
        let node = net.boundary_points()[entry];
        let dest = net.snap(self.sim.demand.sample_destination(bin, &mut self.rng));
        let informed = self.rng.random_bool(self.sim.config.p_info);
        let mut b = self.new_biker(informed, Goal::Point(dest), node);
        self.entered += 1;
        self.log(Event::Enter {
            tick: self.t32(),
            biker: b.id,
            node,
            informed,
        });
        self.start_ride(&mut b, node, None);
        self.bikers.insert(b.id, b);
    }

    fn spawn_departure(&mut self, bin: usize) {
        let net = self.net();
        let demand = self.sim.demand;
        let origin = net.snap(demand.sample_origin(bin, &mut self.rng));
        let station = net
            .nearest_station_from(origin, |_| true)
            .map(|s| net.station_index(s.id).expect("known station"))
            .expect("at least two stations");
        let informed = self.rng.random_bool(self.sim.config.p_info);
        let exits = net.boundary_points();
        let internal = exits.is_empty() || self.rng.random_bool(self.sim.config.p_it);
        let goal = if internal {
            Goal::Point(net.snap(demand.sample_destination(bin, &mut self.rng)))
        } else {
            Goal::Exit(exits[self.rng.random_range(0..exits.len())])
        };
        let node = net.stations()[station].node;
        let mut b = self.new_biker(informed, goal, node);
        self.log(Event::Request {
            tick: self.t32(),
            biker: b.id,
            station: net.stations()[station].id,
            informed,
            outbound: !internal,
        });
        if self.occupancy[station] > 0 {
            self.occupancy[station] -= 1;
            self.start_ride(&mut b, node, Some(station));
            self.bikers.insert(b.id, b);
        } else {
            self.empty_origin(b, station);
        }
    }

    /// Origin `station` has no bike: walk to another one or give up.
    fn empty_origin(&mut self, mut b: Biker, station: usize) {
        let net = self.net();
        let here = &net.stations()[station];
        b.adverse = true;
        b.visited.insert(here.id);
        let next = if b.informed {
            let occ = &self.occupancy;
            net.nearest_station_from(here.node, |s| {
                occ[net.station_index(s.id).expect("known station")] > 0
            })
            .map(|s| s.id)
        } else {
            let within =
                net.stations_within_from(here.node, self.sim.config.walk_radius_m, &b.visited);
            (!within.is_empty()).then(|| within[self.rng.random_range(0..within.len())])
        };
        self.log(Event::EmptyOrigin {
            tick: self.t32(),
            biker: b.id,
            station: here.id,
            walk_to: next,
        });
        match next {
            Some(id) => {
                let idx = net.station_index(id).expect("known station");
                let path = net
                    .shortest_path(here.node, net.stations()[idx].node)
                    .expect("stations are connected");
                b.route = Route::new(net, path);
                b.mode = Mode::Walking { station: idx };
                b.walked = true;
                self.bikers.insert(b.id, b);
            }
            None => self.abandon(b, here.id),
        }
    }

    fn abandon(&mut self, b: Biker, station: StationId) {
        self.log(Event::Abandon {
            tick: self.t32(),
            biker: b.id,
            station,
        });
        self.bikers.remove(&b.id);
        self.records.push(TravelRecord {
            biker: b.id,
            start_tick: b.start_tick,
            end_tick: self.t32(),
            d_th: 0.0,
            d_r: 0.0,
            adverse: true,
            informed: b.informed,
            outbound: matches!(b.goal, Goal::Exit(_)),
            outcome: Outcome::Abandoned,
        });
    }

    fn activate_walker(&mut self, id: u64, station: usize) {
        let mut b = self.bikers.remove(&id).expect("waiting biker exists");
        if self.occupancy[station] > 0 {
            self.occupancy[station] -= 1;
            let node = self.net().stations()[station].node;
            self.start_ride(&mut b, node, Some(station));
            self.bikers.insert(b.id, b);
        } else if !b.retried_origin {
            b.retried_origin = true;
            self.empty_origin(b, station);
        } else {
            let sid = self.net().stations()[station].id;
            self.abandon(b, sid);
        }
    }

    fn nearest_free_dock(&self, from: NodeId) -> Option<usize> {
        let net = self.net();
        let (occ, cap) = (&self.occupancy, &self.capacities);
        net.nearest_station_from(from, |s| {
            let i = net.station_index(s.id).expect("known station");
            occ[i] < cap[i]
        })
        .map(|s| net.station_index(s.id).expect("known station"))
    }

    /// Starts riding from `from`; the destination is resolved against current occupancy.
    fn start_ride(&mut self, b: &mut Biker, from: NodeId, station: Option<usize>) {
        let net = self.net();
        b.target = match b.goal {
            Goal::Exit(n) => Target::Exit(n),
            Goal::Point(n) if b.informed => self
                .nearest_free_dock(n)
                .map_or(Target::Point(n), Target::Station),
            Goal::Point(n) => net.station_at(n).map_or(Target::Point(n), Target::Station),
        };
        let target_node = self.target_node(b.target);
        let path = net
            .shortest_path(from, target_node)
            .expect("targets are reachable");
        b.d_th = path.length;
        b.route = Route::new(net, path);
        b.mode = Mode::Riding;
        self.log(Event::Start {
            tick: self.t32(),
            biker: b.id,
            station: station.map(|i| net.stations()[i].id),
            target_station: match b.target {
                Target::Station(i) => Some(net.stations()[i].id),
                _ => None,
            },
            target_node,
            d_th: b.d_th,
        });
    }

    fn target_node(&self, t: Target) -> NodeId {
        match t {
            Target::Exit(n) | Target::Point(n) => n,
            Target::Station(i) => self.net().stations()[i].node,
        }
    }

    fn move_bikers(&mut self) {
        let (ride, walk) = (self.ride_step, self.walk_step);
        for b in self.bikers.values_mut() {
            match b.mode {
                Mode::Riding => b.d_r += b.route.advance(ride),
                Mode::Walking { .. } => {
                    b.route.advance(walk);
                }
                Mode::Waiting { .. } => {}
            }
        }
    }

    fn finish_or_redirect(&mut self) {
        let arrived: Vec<u64> = self
            .bikers
            .values()
            .filter(|b| !matches!(b.mode, Mode::Waiting { .. }) && b.route.finished())
            .map(|b| b.id)
            .collect();
        for id in arrived {
            let mut b = self.bikers.remove(&id).expect("arrived biker exists");
            match (b.mode, b.target) {
                (Mode::Walking { station }, _) => {
                    b.mode = Mode::Waiting { station };
                    self.bikers.insert(id, b);
                }
                (_, Target::Exit(node)) => {
                    self.exited += 1;
                    self.log(Event::Exit {
                        tick: self.t32(),
                        biker: id,
                        node,
                        adverse: b.adverse,
                        d_th: b.d_th,
                        d_r: b.d_r,
                    });
                    self.finish(b, Outcome::Exited);
                }
                (_, Target::Point(node)) => {
                    let next = if b.informed {
                        self.nearest_free_dock(node)
                    } else {
                        self.uninformed_choice(&b, node)
                    };
                    if let Some(s) = next {
                        let net = self.net();
                        self.log(Event::Redirect {
                            tick: self.t32(),
                            biker: id,
                            to: net.stations()[s].id,
                        });
                        self.ride_to(&mut b, s);
                    }
                    self.bikers.insert(id, b);
                }
                (_, Target::Station(s)) => {
                    let sid = self.net().stations()[s].id;
                    if self.occupancy[s] < self.capacities[s] {
                        self.occupancy[s] += 1;
                        self.log(Event::Drop {
                            tick: self.t32(),
                            biker: id,
                            station: sid,
                            adverse: b.adverse,
                            d_th: b.d_th,
                            d_r: b.d_r,
                        });
                        let outcome = if b.walked {
                            Outcome::WalkDock
                        } else {
                            Outcome::Dropped
                        };
                        self.finish(b, outcome);
                        continue;
                    }
                    b.adverse = true;
                    b.visited.insert(sid);
                    let node = self.net().stations()[s].node;
                    let next = if b.informed {
                        self.nearest_free_dock(node)
                    } else {
                        self.uninformed_choice(&b, node)
                    };
                    self.log(Event::Full {
                        tick: self.t32(),
                        biker: id,
                        station: sid,
                        to: next.map(|i| self.net().stations()[i].id),
                    });
                    if let Some(next) = next {
                        self.ride_to(&mut b, next);
                    }
                    self.bikers.insert(id, b);
                }
            }
        }
    }

    /// Random unvisited station within `r`, then within `2r`, then the nearest free dock.
    fn uninformed_choice(&mut self, b: &Biker, from: NodeId) -> Option<usize> {
        let net = self.net();
        let r = self.sim.config.walk_radius_m;
        for radius in [r, 2.0 * r] {
            let within = net.stations_within_from(from, radius, &b.visited);
            if !within.is_empty() {
                let id = within[self.rng.random_range(0..within.len())];
                return net.station_index(id);
            }
        }
        self.nearest_free_dock(from)
    }

    fn ride_to(&mut self, b: &mut Biker, station: usize) {
        let net = self.net();
        let path = net
            .shortest_path(b.route.node(), net.stations()[station].node)
            .expect("stations are connected");
        b.route = Route::new(net, path);
        b.target = Target::Station(station);
    }

    fn finish(&mut self, b: Biker, outcome: Outcome) {
        self.records.push(TravelRecord {
            biker: b.id,
            start_tick: b.start_tick,
            end_tick: self.t32(),
            d_th: b.d_th,
            d_r: b.d_r,
            adverse: b.adverse,
            informed: b.informed,
            outbound: matches!(b.goal, Goal::Exit(_)),
            outcome,
        });
    }

    /// Records every biker still active as an unfinished travel.
    pub fn close_day(&mut self) {
        let remaining = std::mem::take(&mut self.bikers);
        for (_, b) in remaining {
            self.log(Event::Unfinished {
                biker: b.id,
                adverse: b.adverse,
            });
            self.finish(b, Outcome::Unfinished);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{
        build_boundary_processes, estimate_field, Grid, KernelSpec, StationEvents,
    };
    use crate::network::{grid_builder, NetworkBuilder, Point};

    fn no_demand(net: &StreetNetwork, bins: usize) -> DemandModel {
        let ids = net.station_ids();
        let events = StationEvents {
            station_ids: ids.clone(),
            bin_seconds: 300,
            departures: vec![vec![0; bins]; ids.len()],
            arrivals: vec![vec![0; bins]; ids.len()],
        };
        DemandModel::fit(
            events,
            net,
            KernelSpec::new(4.0).unwrap(),
            100.0,
            14.0 / 3.6,
        )
        .unwrap()
    }

    fn two_stations(radius_gap: f64) -> StreetNetwork {
        let mut b = NetworkBuilder::new();
        let a = b.add_node(Point::new(0.0, 0.0));
        let c = b.add_node(Point::new(radius_gap, 0.0));
        b.add_edge(a, c);
        b.add_station(StationId(1), a, 5)
            .add_station(StationId(2), c, 5);
        b.bounds(vec![
            Point::new(0.0, -10.0),
            Point::new(radius_gap, -10.0),
            Point::new(radius_gap, 10.0),
            Point::new(0.0, 10.0),
        ]);
        b.build().unwrap()
    }

    #[test]
    fn empty_demand_leaves_state_unchanged() {
        let net = grid_builder(4, 4, 900.0)
            .add_station(StationId(1), NodeId(0), 10)
            .add_station(StationId(2), NodeId(15), 10)
            .add_boundary(NodeId(3))
            .build()
            .unwrap();
        let demand = no_demand(&net, 12);
        let sim = Simulation::new(&net, &demand, SimConfig::default(), Some(vec![3, 7])).unwrap();
        let r = sim.run(1, true);
        assert_eq!(r.ticks(), 60);
        assert!(r.occupancy.iter().all(|row| row == &vec![3, 7]));
        assert!(r.records.is_empty());
        assert!(r.events.unwrap().is_empty());
    }

    #[test]
    fn rejects_tick_not_dividing_bin() {
        let net = two_stations(500.0);
        let demand = no_demand(&net, 2);
        let cfg = SimConfig {
            tau_s: 70,
            ..SimConfig::default()
        };
        assert!(matches!(
            Simulation::new(&net, &demand, cfg, None),
            Err(SimError::TickDoesNotDivideBin { .. })
        ));
    }

    fn one_departure_demand(net: &StreetNetwork, origin: Point) -> DemandModel {
        let ids = net.station_ids();
        let mut departures = vec![vec![0; 2]; ids.len()];
        departures[0][0] = 1;
        let events = StationEvents {
            station_ids: ids.clone(),
            bin_seconds: 300,
            departures,
            arrivals: vec![vec![0; 2]; ids.len()],
        };
        let grid = Grid::covering(net.bounds(), 10.0);
        let ev = [crate::demand::WeightedEvent {
            position: origin,
            bin: 0,
            weight: 1.0,
        }];
        // origins and destinations pinned to the chosen point
        let field = estimate_field::<f64>(&ev, 2, &grid, 1e-6);
        let boundary = build_boundary_processes(&events, net, 4.0);
        DemandModel::from_parts(
            KernelSpec::new(4.0).unwrap(),
            1.0,
            events,
            field.clone(),
            field,
            boundary,
        )
    }

    #[test]
    fn empty_origin_without_candidate_is_abandoned() {
        let net = two_stations(1000.0);
        let demand = one_departure_demand(&net, Point::new(1.0, 0.0));
        let cfg = SimConfig {
            p_info: 0.0,
            walk_radius_m: 300.0,
            ..SimConfig::default()
        };
        let sim = Simulation::new(&net, &demand, cfg, Some(vec![0, 5])).unwrap();
        let r = sim.run(3, false);
        assert_eq!(r.records.len(), 1);
        let rec = &r.records[0];
        assert_eq!(rec.outcome, Outcome::Abandoned);
        assert!(rec.adverse);
        assert_eq!(r.occupancy.last().unwrap(), &vec![0, 5]);
    }

    #[test]
    fn empty_origin_walks_to_station_within_radius() {
        let net = two_stations(200.0);
        let demand = one_departure_demand(&net, Point::new(1.0, 0.0));
        let cfg = SimConfig {
            p_info: 0.0,
            p_it: 1.0,
            walk_radius_m: 300.0,
            ..SimConfig::default()
        };
        let sim = Simulation::new(&net, &demand, cfg, Some(vec![0, 5])).unwrap();
        let r = sim.run(3, true);
        assert_eq!(r.records.len(), 1);
        let rec = &r.records[0];
        assert!(rec.adverse);
        // took the bike at station 2, rode back to the destination at station 1
        assert_eq!(rec.outcome, Outcome::WalkDock);
        assert_eq!(r.occupancy.last().unwrap(), &vec![1, 4]);
        assert!((rec.d_th - 200.0).abs() < 1e-9);
    }

    #[test]
    fn informed_round_trip_docks_at_origin() {
        // the departure frees a dock at station 1, the nearest free dock to the destination
        let net = two_stations(600.0);
        let demand = one_departure_demand(&net, Point::new(1.0, 0.0));
        let cfg = SimConfig {
            p_info: 1.0,
            p_it: 1.0,
            ..SimConfig::default()
        };
        let sim = Simulation::new(&net, &demand, cfg, Some(vec![5, 0])).unwrap();
        let r = sim.run(9, true);
        let rec = &r.records[0];
        assert_eq!(rec.outcome, Outcome::Dropped);
        assert_eq!(r.occupancy.last().unwrap(), &vec![5, 0]);
        assert!(!rec.adverse);
    }

    #[test]
    fn conservation_on_small_grid() {
        let mut b = grid_builder(5, 5, 1200.0);
        for (i, n) in [0u32, 4, 12, 20, 24, 7].iter().enumerate() {
            b.add_station(StationId(i as u32 + 1), NodeId(*n), 6);
        }
        b.add_boundary(NodeId(2)).add_boundary(NodeId(22));
        let net = b.build().unwrap();
        let ids = net.station_ids();
        let bins = 24;
        let events = StationEvents {
            station_ids: ids.clone(),
            bin_seconds: 300,
            departures: (0..ids.len())
                .map(|s| (0..bins).map(|t| ((s + t) % 3) as u32).collect())
                .collect(),
            arrivals: (0..ids.len())
                .map(|s| (0..bins).map(|t| ((s * t) % 4) as u32).collect())
                .collect(),
        };
        let demand = DemandModel::fit(
            events,
            &net,
            KernelSpec::new(3.0).unwrap(),
            50.0,
            14.0 / 3.6,
        )
        .unwrap();
        let sim = Simulation::new(&net, &demand, SimConfig::default(), None).unwrap();
        for seed in 0..5 {
            let r = sim.run(seed, false);
            let start = r.ledger[0].docked;
            for l in &r.ledger {
                assert_eq!(l.docked + l.in_transit, start + l.entered - l.exited);
            }
            for row in &r.occupancy {
                assert!(row.iter().zip(&r.capacities).all(|(b, c)| b <= c));
            }
            assert!(!r.records.is_empty());
        }
    }
}
