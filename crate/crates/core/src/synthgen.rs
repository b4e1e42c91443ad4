//! Deterministic synthetic smart-home logs.
//!
//! A home is a set of rooms with sensors and a set of scripted activities. Each activity
//! emits sensor readings from a small Markov chain over its rooms' tokens, wrapped in
//! begin/end annotations. Between activities the resident walks through a transit room,
//! producing unannotated ("Other") events. Optional noise: a pet firing random motion
//! sensors and a second resident running an independent activity stream.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::event_log::{render_log, Annotation, Marker, SensorEvent, OTHER_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor: String,
    pub value: String,
}

impl SensorReading {
    pub fn new(sensor: &str, value: &str) -> Self {
        SensorReading { sensor: sensor.to_string(), value: value.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    pub motion: Vec<String>,
    #[serde(default)]
    pub doors: Vec<String>,
    #[serde(default)]
    pub temperature: Option<String>,
}

/// Constant reading reported by every temperature sensor.
pub const TEMPERATURE_READING: &str = "21.5";

impl Room {
    pub fn new(name: &str, motion: &[&str], doors: &[&str], temperature: Option<&str>) -> Self {
        Room {
            name: name.to_string(),
            motion: motion.iter().map(|s| s.to_string()).collect(),
            doors: doors.iter().map(|s| s.to_string()).collect(),
            temperature: temperature.map(str::to_string),
        }
    }

    pub fn sensors(&self) -> impl Iterator<Item = &String> {
        self.motion.iter().chain(&self.doors).chain(&self.temperature)
    }

    /// Every reading the room's sensors can produce.
    pub fn readings(&self) -> Vec<SensorReading> {
        let mut r = Vec::new();
        for m in &self.motion {
            r.push(SensorReading::new(m, "ON"));
            r.push(SensorReading::new(m, "OFF"));
        }
        for d in &self.doors {
            r.push(SensorReading::new(d, "OPEN"));
            r.push(SensorReading::new(d, "CLOSE"));
        }
        if let Some(t) = &self.temperature {
            r.push(SensorReading::new(t, TEMPERATURE_READING));
        }
        r
    }
}

/// First-order Markov chain over sensor readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrammar {
    pub states: Vec<SensorReading>,
    /// Unnormalised start weights.
    pub start: Vec<f64>,
    /// Unnormalised transition weights, `states × states`.
    pub transitions: Vec<Vec<f64>>,
}

impl TokenGrammar {
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if n == 0 {
            return Err(HarError::invalid("grammar has no states"));
        }
        let ok_row = |row: &[f64]| {
            row.len() == n && row.iter().all(|w| w.is_finite() && *w >= 0.0) && row.iter().sum::<f64>() > 0.0
        };
        if !ok_row(&self.start) || self.transitions.len() != n || !self.transitions.iter().all(|r| ok_row(r)) {
            return Err(HarError::invalid("grammar weights must be finite, non-negative and non-zero per row"));
        }
        Ok(())
    }

    /// Each state moves to one of the next `k` states (cyclically) with equal probability,
    /// so the next-token entropy is exactly `ln k`.
    pub fn cyclic_walk(states: Vec<SensorReading>, k: usize) -> Result<Self> {
        let n = states.len();
        if k == 0 || k > n {
            return Err(HarError::invalid(format!("need 1 <= k <= {n} successors, got {k}")));
        }
        let transitions = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                for j in 1..=k {
                    row[(i + j) % n] = 1.0;
                }
                row
            })
            .collect();
        Ok(TokenGrammar { start: vec![1.0; n], states, transitions })
    }

    /// A sparse random chain: every state gets `branching` distinct successors with random weights.
    pub fn random_walk<R: Rng>(states: Vec<SensorReading>, branching: usize, rng: &mut R) -> Result<Self> {
        let n = states.len();
        if n == 0 || branching == 0 {
            return Err(HarError::invalid("random walk needs states and branching >= 1"));
        }
        let b = branching.min(n);
        let mut transitions = Vec::with_capacity(n);
        let mut ids: Vec<usize> = (0..n).collect();
        for _ in 0..n {
            ids.shuffle(rng);
            let mut row = vec![0.0; n];
            for &j in &ids[..b] {
                row[j] = rng.random_range(0.2..1.0);
            }
            transitions.push(row);
        }
        let start = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        Ok(TokenGrammar { states, start, transitions })
    }

    fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random_range(0.0..total);
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Samples `len` state indexes.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = Self::pick(&self.start, rng);
        out.push(s);
        for _ in 1..len {
            s = Self::pick(&self.transitions[s], rng);
            out.push(s);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySpec {
    pub name: String,
    pub rooms: Vec<String>,
    /// Explicit grammar; when absent a random walk over the rooms' readings is drawn from the seed.
    #[serde(default)]
    pub grammar: Option<TokenGrammar>,
    /// Inclusive range of events per occurrence (at least 2).
    pub events: (usize, usize),
    /// Relative scheduling frequency.
    pub weight: f64,
    /// 1 or 2.
    #[serde(default = "one")]
    pub resident: u8,
}

fn one() -> u8 {
    1
}

impl ActivitySpec {
    pub fn new(name: &str, rooms: &[&str], events: (usize, usize), weight: f64) -> Self {
        ActivitySpec {
            name: name.to_string(),
            rooms: rooms.iter().map(|s| s.to_string()).collect(),
            grammar: None,
            events,
            weight,
            resident: 1,
        }
    }

    pub fn for_resident(mut self, resident: u8) -> Self {
        self.resident = resident;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeSpec {
    pub name: String,
    pub rooms: Vec<Room>,
    pub activities: Vec<ActivitySpec>,
    pub residents: u8,
    /// Expected pet events per resident event.
    pub pet_noise_rate: f64,
    pub days: usize,
    pub activities_per_day: usize,
    pub second_resident_activities_per_day: usize,
    /// Room the residents walk through between activities.
    pub transit_room: String,
    /// Inclusive range of unannotated transit events between activities (at least 1).
    pub transit_events: (usize, usize),
    pub mean_gap_secs: f64,
    /// Successors per state for generated grammars.
    pub branching: usize,
    /// Grammar of the transit runs; generated from the seed when absent.
    #[serde(default)]
    pub transit_grammar: Option<TokenGrammar>,
    pub start_date: NaiveDate,
    /// Built-in relabel map that turns raw activity names into classes, if any.
    #[serde(default)]
    pub relabel: Option<String>,
    pub seed: u64,
}

/// Upper bound on the pet rate; candidate pet events per resident event.
const PET_CANDIDATES: usize = 8;

impl HomeSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarError::invalid(m));
        if !(1..=2).contains(&self.residents) {
            return err(format!("residents must be 1 or 2, got {}", self.residents));
        }
        if !self.pet_noise_rate.is_finite() || !(0.0..=PET_CANDIDATES as f64).contains(&self.pet_noise_rate) {
            return err(format!("pet noise rate must be in [0, {PET_CANDIDATES}]"));
        }
        if !(self.mean_gap_secs.is_finite() && self.mean_gap_secs > 0.0) {
            return err("mean gap must be positive".into());
        }
        if self.days == 0 || self.activities_per_day == 0 {
            return err("days and activities per day must be positive".into());
        }
        if self.transit_events.0 == 0 || self.transit_events.0 > self.transit_events.1 {
            return err("transit events need 1 <= min <= max".into());
        }
        let rooms: BTreeSet<&str> = self.rooms.iter().map(|r| r.name.as_str()).collect();
        if rooms.len() != self.rooms.len() {
            return err("room names must be unique".into());
        }
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &self.rooms {
            for s in r.sensors() {
                if s.is_empty() || s.contains(char::is_whitespace) {
                    return err(format!("bad sensor id {s:?}"));
                }
                if let Some(prev) = owner.insert(s, &r.name) {
                    return err(format!("sensor {s} belongs to both {prev} and {}", r.name));
                }
            }
            if r.readings().is_empty() {
                return err(format!("room {} has no sensors", r.name));
            }
        }
        if !rooms.contains(self.transit_room.as_str()) {
            return err(format!("unknown transit room {}", self.transit_room));
        }
        if !self.activities.iter().any(|a| a.resident == 1) {
            return err("resident 1 needs at least one activity".into());
        }
        if self.residents == 2 && self.second_resident_activities_per_day > 0 && !self.activities.iter().any(|a| a.resident == 2) {
            return err("resident 2 is scheduled but has no activities".into());
        }
        for a in &self.activities {
            if a.name.trim().is_empty() || a.name.ends_with(" begin") || a.name.ends_with(" end") {
                return err(format!("bad activity name {:?}", a.name));
            }
            if a.name == OTHER_LABEL {
                return err("Other is reserved for unannotated events".into());
            }
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return err(format!("activity {} needs a positive weight", a.name));
            }
            if a.events.0 < 2 || a.events.0 > a.events.1 {
                return err(format!("activity {} needs 2 <= min events <= max", a.name));
            }
            if !(1..=2).contains(&a.resident) {
                return err(format!("activity {} has resident {}", a.name, a.resident));
            }
            if a.rooms.is_empty() {
                return err(format!("activity {} has no rooms", a.name));
            }
            for r in &a.rooms {
                if !rooms.contains(r.as_str()) {
                    return err(format!("activity {} references unknown room {r}", a.name));
                }
            }
            if let Some(g) = &a.grammar {
                g.validate()?;
                for s in &g.states {
                    if !owner.contains_key(s.sensor.as_str()) {
                        return err(format!("activity {} uses unknown sensor {}", a.name, s.sensor));
                    }
                }
            }
        }
        if let Some(g) = &self.transit_grammar {
            g.validate()?;
            if let Some(s) = g.states.iter().find(|s| !owner.contains_key(s.sensor.as_str())) {
                return err(format!("transit grammar uses unknown sensor {}", s.sensor));
            }
        }
        Ok(())
    }

    pub fn room(&self, name: &str) -> Option<&Room> {
        self.rooms.iter().find(|r| r.name == name)
    }

    pub fn room_of_sensor(&self) -> BTreeMap<String, String> {
        self.rooms
            .iter()
            .flat_map(|r| r.sensors().map(move |s| (s.clone(), r.name.clone())))
            .collect()
    }

    /// Activity grammars followed by the transit grammar, generating any that are not fixed.
    pub fn grammars(&self) -> Result<(Vec<TokenGrammar>, TokenGrammar)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6a09_e667_f3bc_c908);
        let readings = |names: &[String]| -> Result<Vec<SensorReading>> {
            names
                .iter()
                .map(|n| self.room(n).map(Room::readings).ok_or_else(|| HarError::invalid(format!("unknown room {n}"))))
                .collect::<Result<Vec<_>>>()
                .map(|v| v.concat())
        };
        let activities = self
            .activities
            .iter()
            .map(|a| match &a.grammar {
                Some(g) => Ok(g.clone()),
                None => TokenGrammar::random_walk(readings(&a.rooms)?, self.branching, &mut rng),
            })
            .collect::<Result<_>>()?;
        let transit = TokenGrammar::random_walk(readings(std::slice::from_ref(&self.transit_room))?, self.branching, &mut rng)?;
        Ok((activities, self.transit_grammar.clone().unwrap_or(transit)))
    }

    /// Same home with every grammar written out, so that changing the seed only changes
    /// the event streams.
    pub fn with_fixed_grammars(&self) -> Result<Self> {
        let (activities, transit) = self.grammars()?;
        let mut out = self.clone();
        for (a, g) in out.activities.iter_mut().zip(activities) {
            a.grammar = Some(g);
        }
        out.transit_grammar = Some(transit);
        Ok(out)
    }

    /// Same home with every sensor id passed through `rename`.
    pub fn rename_sensors(&self, rename: impl Fn(&str) -> String) -> Self {
        let mut out = self.clone();
        for r in &mut out.rooms {
            r.motion.iter_mut().for_each(|s| *s = rename(s));
            r.doors.iter_mut().for_each(|s| *s = rename(s));
            if let Some(t) = &mut r.temperature {
                *t = rename(t);
            }
        }
        let grammars = out.activities.iter_mut().filter_map(|a| a.grammar.as_mut()).chain(out.transit_grammar.as_mut());
        for g in grammars {
            g.states.iter_mut().for_each(|s| s.sensor = rename(&s.sensor));
        }
        out
    }
}

/// One annotated activity occurrence or one transit run, as scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSequence {
    pub label: String,
    pub resident: u8,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub event_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub name: String,
    pub events: Vec<SensorEvent>,
    pub truth: Vec<TruthSequence>,
    pub room_of_sensor: BTreeMap<String, String>,
    pub relabel: Option<String>,
    /// Number of pet events mixed into the log.
    pub pet_events: usize,
}

impl GeneratedDataset {
    pub fn log_text(&self) -> String {
        render_log(&self.events)
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "relabel": self.relabel,
            "pet_events": self.pet_events,
            "room_of_sensor": self.room_of_sensor,
            "sequences": self.truth,
        })
    }

    /// Writes the log to `path` and the ground truth to `<path>.truth.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_text())?;
        let mut side = path.as_os_str().to_owned();
        side.push(".truth.json");
        std::fs::write(side, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }
}

/// Deficit scheduling: picks, slot by slot, the activity furthest behind its expected share.
fn schedule(activities: &[usize], weights: &[f64], days: usize, per_day: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let total: f64 = activities.iter().map(|&a| weights[a]).sum();
    let mut counts = vec![0usize; activities.len()];
    let mut slots = 0usize;
    let mut plan = Vec::with_capacity(days);
    for _ in 0..days {
        let mut day = Vec::with_capacity(per_day);
        for _ in 0..per_day {
            slots += 1;
            let best = (0..activities.len())
                .max_by(|&x, &y| {
                    let dx = weights[activities[x]] / total * slots as f64 - counts[x] as f64;
                    let dy = weights[activities[y]] / total * slots as f64 - counts[y] as f64;
                    dx.partial_cmp(&dy).expect("finite").then(y.cmp(&x))
                })
                .expect("non-empty");
            counts[best] += 1;
            day.push(activities[best]);
        }
        day.shuffle(rng);
        plan.push(day);
    }
    plan
}

struct Stream<'a> {
    spec: &'a HomeSpec,
    grammars: &'a [TokenGrammar],
    transit: &'a TokenGrammar,
    gap: Exp<f64>,
    rng: ChaCha8Rng,
}

impl Stream<'_> {
    fn step(&mut self, t: NaiveDateTime) -> NaiveDateTime {
        let secs = self.gap.sample(&mut self.rng) + 0.001;
        t + Duration::microseconds((secs * 1e6) as i64)
    }

    fn emit(
        &mut self,
        grammar: &TokenGrammar,
        len: usize,
        t: &mut NaiveDateTime,
        label: Option<&str>,
        out: &mut Vec<SensorEvent>,
    ) -> (NaiveDateTime, NaiveDateTime) {
        let states = grammar.sample(len, &mut self.rng);
        let start = *t;
        for (k, &s) in states.iter().enumerate() {
            let annotation = label.and_then(|name| {
                let marker = if k == 0 {
                    Marker::Begin
                } else if k == len - 1 {
                    Marker::End
                } else {
                    return None;
                };
                Some(Annotation { activity: name.to_string(), marker })
            });
            let r = &grammar.states[s];
            out.push(SensorEvent::new(*t, r.sensor.clone(), r.value.clone(), annotation).expect("valid generated event"));
            if k + 1 < len {
                *t = self.step(*t);
            }
        }
        let end = *t;
        *t = self.step(*t);
        (start, end)
    }

    /// One resident's day: activity, transit, activity, transit, ...
    fn day(
        &mut self,
        resident: u8,
        plan: &[usize],
        mut t: NaiveDateTime,
        out: &mut Vec<SensorEvent>,
        truth: &mut Vec<TruthSequence>,
    ) {
        let spec = self.spec;
        let transit = self.transit;
        let walk = |s: &mut Self, t: &mut NaiveDateTime, out: &mut Vec<SensorEvent>, truth: &mut Vec<TruthSequence>| {
            let n = s.rng.random_range(spec.transit_events.0..=spec.transit_events.1);
            let (start, end) = s.emit(transit, n, t, None, out);
            truth.push(TruthSequence { label: OTHER_LABEL.into(), resident, start, end, event_count: n });
        };
        for &a in plan {
            let act = &spec.activities[a];
            let n = self.rng.random_range(act.events.0..=act.events.1);
            let grammar = &self.grammars[a];
            let (start, end) = self.emit(grammar, n, &mut t, Some(&act.name), out);
            truth.push(TruthSequence { label: act.name.clone(), resident, start, end, event_count: n });
            walk(self, &mut t, out, truth);
        }
    }
}

/// Builds the log described by `spec`. Fully determined by `spec.seed`.
pub fn generate(spec: &HomeSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let (grammars, transit) = spec.grammars()?;
    let weights: Vec<f64> = spec.activities.iter().map(|a| a.weight).collect();
    let gap = Exp::new(1.0 / spec.mean_gap_secs).map_err(|e| HarError::invalid(e.to_string()))?;

    let mut events = Vec::new();
    let mut truth = Vec::new();
    for resident in 1..=spec.residents {
        let per_day = if resident == 1 { spec.activities_per_day } else { spec.second_resident_activities_per_day };
        if per_day == 0 {
            continue;
        }
        let mine: Vec<usize> = (0..spec.activities.len()).filter(|&a| spec.activities[a].resident == resident).collect();
        let mut stream = Stream {
            spec,
            grammars: &grammars,
            transit: &transit,
            gap,
            rng: ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(resident as u64 * 0x9e37_79b9)),
        };
        let plan = schedule(&mine, &weights, spec.days, per_day, &mut stream.rng);
        for (d, day_plan) in plan.iter().enumerate() {
            let date = spec.start_date + Duration::days(d as i64);
            let offset = stream.rng.random_range(0..1800 * resident as i64);
            let t0 = date.and_time(NaiveTime::from_hms_opt(7, 0, 0).expect("valid time")) + Duration::seconds(offset);
            stream.day(resident, day_plan, t0, &mut events, &mut truth);
        }
    }
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
    truth.sort_by(|a, b| a.start.cmp(&b.start).then(a.resident.cmp(&b.resident)));

    let pet_events = add_pet_noise(spec, &mut events)?;
    Ok(GeneratedDataset {
        name: spec.name.clone(),
        events,
        truth,
        room_of_sensor: spec.room_of_sensor(),
        relabel: spec.relabel.clone(),
        pet_events,
    })
}

/// Mixes unannotated pet motion events between resident events. The pet stream has its
/// own generator and always draws the same candidates, so a higher rate keeps every pet
/// event of a lower rate and adds more.
fn add_pet_noise(spec: &HomeSpec, events: &mut Vec<SensorEvent>) -> Result<usize> {
    let motion: Vec<&String> = spec.rooms.iter().flat_map(|r| &r.motion).collect();
    if motion.is_empty() || events.is_empty() {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xbb67_ae85_84ca_a73b);
    let threshold = spec.pet_noise_rate / PET_CANDIDATES as f64;
    let mut pets = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let next = events.get(i + 1).map(|n| n.timestamp).unwrap_or(e.timestamp + Duration::seconds(60));
        let span = (next - e.timestamp).num_microseconds().unwrap_or(0);
        for _ in 0..PET_CANDIDATES {
            let u: f64 = rng.random();
            let sensor = motion[rng.random_range(0..motion.len())];
            let frac: f64 = rng.random_range(0.1..0.9);
            let at = e.timestamp + Duration::microseconds((span as f64 * frac) as i64);
            if u < threshold && at > e.timestamp && at < next {
                pets.push(SensorEvent::new(at, sensor.clone(), "ON", None)?);
            }
        }
    }
    let n = pets.len();
    events.extend(pets);
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
    Ok(n)
}

/// Aruba-, Milan- and Cairo-like homes at desk scale: 1 resident, 1 resident with a pet,
/// 2 residents with a pet.
pub fn default_scenarios() -> Vec<HomeSpec> {
    vec![aruba_like(), milan_like(), cairo_like()]
}

pub fn scenario(name: &str) -> Option<HomeSpec> {
    default_scenarios().into_iter().find(|s| s.name == name)
}

fn base_rooms() -> Vec<Room> {
    vec![
        Room::new("Bedroom", &["M001", "M002"], &["D001"], None),
        Room::new("Bathroom", &["M003"], &["D002"], None),
        Room::new("Kitchen", &["M004", "M005"], &[], Some("T001")),
        Room::new("Living", &["M006", "M007"], &[], None),
        Room::new("Office", &["M008"], &[], Some("T002")),
        Room::new("Hall", &["M009", "M011"], &[], None),
        Room::new("Entrance", &["M012"], &["D003"], None),
    ]
}

fn base_spec(name: &str, rooms: Vec<Room>, activities: Vec<ActivitySpec>) -> HomeSpec {
    HomeSpec {
        name: name.to_string(),
        rooms,
        activities,
        residents: 1,
        pet_noise_rate: 0.0,
        days: 30,
        activities_per_day: 6,
        second_resident_activities_per_day: 0,
        transit_room: "Hall".into(),
        transit_events: (2, 4),
        mean_gap_secs: 20.0,
        branching: 3,
        transit_grammar: None,
        start_date: NaiveDate::from_ymd_opt(2010, 11, 4).expect("valid date"),
        relabel: None,
        seed: 1,
    }
}

pub fn aruba_like() -> HomeSpec {
    base_spec(
        "aruba_like",
        base_rooms(),
        vec![
            ActivitySpec::new("Sleeping", &["Bedroom"], (6, 14), 1.0),
            ActivitySpec::new("Bed_to_Toilet", &["Bedroom", "Bathroom"], (3, 8), 0.6),
            ActivitySpec::new("Meal_Preparation", &["Kitchen"], (8, 20), 1.5),
            ActivitySpec::new("Relax", &["Living"], (6, 16), 1.5),
            ActivitySpec::new("Work", &["Office"], (5, 12), 0.8),
            ActivitySpec::new("Leave_Home", &["Entrance"], (3, 6), 0.6),
        ],
    )
}

pub fn milan_like() -> HomeSpec {
    let mut rooms = base_rooms();
    rooms.push(Room::new("Dining", &["M010"], &[], None));
    rooms.push(Room::new("Cabinet", &["M013"], &["D005"], None));
    let mut s = base_spec(
        "milan_like",
        rooms,
        vec![
            ActivitySpec::new("Sleep", &["Bedroom"], (6, 14), 1.0),
            ActivitySpec::new("Master Bathroom", &["Bathroom"], (4, 10), 0.8),
            ActivitySpec::new("Kitchen Activity", &["Kitchen"], (8, 20), 1.5),
            ActivitySpec::new("Dining Rm Activity", &["Dining", "Kitchen"], (4, 10), 0.8),
            ActivitySpec::new("Watch Tv", &["Living"], (6, 16), 1.2),
            ActivitySpec::new("Desk Activity", &["Office"], (5, 12), 0.7),
            ActivitySpec::new("Morning Meds", &["Cabinet"], (3, 5), 0.5),
        ],
    );
    s.pet_noise_rate = 0.15;
    s.relabel = Some("milan".into());
    s.seed = 2;
    s
}

pub fn cairo_like() -> HomeSpec {
    let mut rooms = base_rooms();
    rooms.push(Room::new("Laundry", &["M010"], &["D004"], None));
    rooms.push(Room::new("Cabinet", &["M013"], &["D005"], None));
    let mut s = base_spec(
        "cairo_like",
        rooms,
        vec![
            ActivitySpec::new("R1 sleep", &["Bedroom"], (6, 14), 1.0),
            ActivitySpec::new("Breakfast", &["Kitchen"], (8, 18), 1.0),
            ActivitySpec::new("Dinner", &["Kitchen"], (8, 18), 1.0),
            ActivitySpec::new("R1 work in office", &["Office"], (6, 14), 1.2),
            ActivitySpec::new("Leave Home", &["Entrance"], (3, 6), 0.8),
            ActivitySpec::new("Bed to toilet", &["Bedroom", "Bathroom"], (3, 8), 0.6),
            ActivitySpec::new("R2 sleep", &["Bedroom"], (6, 14), 1.0).for_resident(2),
            ActivitySpec::new("R2 take medicine", &["Cabinet"], (3, 5), 0.8).for_resident(2),
            ActivitySpec::new("Laundry", &["Laundry"], (5, 10), 0.8).for_resident(2),
        ],
    );
    s.residents = 2;
    s.second_resident_activities_per_day = 2;
    s.pet_noise_rate = 0.05;
    s.relabel = Some("cairo".into());
    s.seed = 3;
    s
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixed_grammars_reproduce_the_home() {
        let mut spec = super::aruba_like();
        spec.days = 3;
        let fixed = spec.with_fixed_grammars().unwrap();
        assert!(fixed.activities.iter().all(|a| a.grammar.is_some()) && fixed.transit_grammar.is_some());
        assert_eq!(super::generate(&spec).unwrap().events, super::generate(&fixed).unwrap().events);
        let renamed = fixed.rename_sensors(|s| format!("X{s}"));
        renamed.validate().unwrap();
        let g = super::generate(&renamed).unwrap();
        assert!(g.events.iter().all(|e| e.sensor_id.starts_with('X')));
    }

    use super::*;
    use crate::event_log::{annotate, clean, parse_log, segment};

    fn quiet(mut s: HomeSpec) -> HomeSpec {
        s.pet_noise_rate = 0.0;
        s.residents = 1;
        s.days = 5;
        s
    }

    #[test]
    fn scenarios_mirror_resident_structure() {
        let s = default_scenarios();
        assert_eq!((s[0].residents, s[0].pet_noise_rate), (1, 0.0));
        assert!(s[1].residents == 1 && s[1].pet_noise_rate > 0.0);
        assert_eq!(s[2].residents, 2);
        for spec in &s {
            spec.validate().unwrap();
            let sensors = spec.room_of_sensor().len();
            assert!((8..=24).contains(&sensors), "{sensors}");
        }
    }

    #[test]
    fn log_parses_and_is_deterministic() {
        for spec in default_scenarios() {
            let mut spec = spec;
            spec.days = 3;
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.log_text(), b.log_text());
            let parsed = parse_log(&a.log_text()).unwrap();
            assert_eq!(parsed, a.events);
            let (cleaned, report) = clean(&parsed);
            assert_eq!(cleaned.len(), parsed.len(), "{report:?}");
        }
    }

    #[test]
    fn noise_free_segments_match_schedule() {
        let spec = quiet(aruba_like());
        let g = generate(&spec).unwrap();
        let (labeled, warnings) = annotate(&g.events);
        assert!(warnings.is_empty());
        let segs = segment(&labeled);
        assert_eq!(segs.len(), g.truth.len());
        for (s, t) in segs.iter().zip(&g.truth) {
            assert_eq!((&s.label, s.start, s.end, s.len()), (&t.label, t.start, t.end, t.event_count));
        }
    }

    #[test]
    fn noise_free_events_stay_in_activity_rooms() {
        let spec = quiet(aruba_like());
        let g = generate(&spec).unwrap();
        let rooms = &g.room_of_sensor;
        let (labeled, _) = annotate(&g.events);
        for le in labeled.iter().filter(|l| l.activity_label != OTHER_LABEL) {
            let act = spec.activities.iter().find(|a| a.name == le.activity_label).unwrap();
            assert!(act.rooms.contains(&rooms[&le.event.sensor_id]));
        }
    }

    #[test]
    fn counts_follow_weights() {
        let mut spec = quiet(aruba_like());
        spec.activities.truncate(5);
        spec.days = 60;
        let g = generate(&spec).unwrap();
        let total_w: f64 = spec.activities.iter().map(|a| a.weight).sum();
        let slots = (spec.days * spec.activities_per_day) as f64;
        for a in &spec.activities {
            let n = g.truth.iter().filter(|t| t.label == a.name).count() as f64;
            let expected = a.weight / total_w * slots;
            assert!((n - expected).abs() <= 1.0, "{} {n} vs {expected}", a.name);
        }
    }

    #[test]
    fn pet_noise_grows_with_rate() {
        let mut spec = quiet(aruba_like());
        let mut prev = 0;
        let rooms = spec.room_of_sensor();
        for rate in [0.0, 0.1, 0.3, 1.0] {
            spec.pet_noise_rate = rate;
            let g = generate(&spec).unwrap();
            let (labeled, _) = annotate(&g.events);
            let foreign = labeled
                .iter()
                .filter(|l| {
                    let act = spec.activities.iter().find(|a| a.name == l.activity_label);
                    act.is_some_and(|a| !a.rooms.contains(&rooms[&l.event.sensor_id]))
                })
                .count();
            if rate == 0.0 {
                assert_eq!((foreign, g.pet_events), (0, 0));
            } else {
                assert!(foreign > prev, "rate {rate}: {foreign} <= {prev}");
            }
            prev = foreign;
        }
    }

    #[test]
    fn second_resident_nests_annotations() {
        let mut spec = cairo_like();
        spec.days = 4;
        spec.pet_noise_rate = 0.0;
        let g = generate(&spec).unwrap();
        assert!(g.truth.iter().any(|t| t.resident == 2));
        let (_, warnings) = annotate(&g.events);
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn cyclic_walk_has_k_uniform_successors() {
        let states: Vec<SensorReading> = (0..6).map(|i| SensorReading::new(&format!("M{i:03}"), "ON")).collect();
        let g = TokenGrammar::cyclic_walk(states, 4).unwrap();
        for (i, row) in g.transitions.iter().enumerate() {
            assert_eq!(row.iter().filter(|w| **w > 0.0).count(), 4);
            assert_eq!(row[i], 0.0);
        }
        assert!(TokenGrammar::cyclic_walk(vec![SensorReading::new("M1", "ON")], 2).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = aruba_like();
        s.activities[0].rooms = vec!["Attic".into()];
        assert!(generate(&s).is_err());
        let mut s = aruba_like();
        s.residents = 3;
        assert!(s.validate().is_err());
        let mut s = aruba_like();
        s.pet_noise_rate = f64::NAN;
        assert!(s.validate().is_err());
    }

    #[test]
    fn renamed_home_keeps_structure() {
        let a = aruba_like();
        let b = a.rename_sensors(|s| format!("X{s}"));
        b.validate().unwrap();
        let ga = generate(&quiet(a)).unwrap();
        let gb = generate(&quiet(b)).unwrap();
        assert_eq!(ga.events.len(), gb.events.len());
        assert!(gb.events.iter().all(|e| e.sensor_id.starts_with('X')));
    }
}
