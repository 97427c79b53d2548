//! Timestamp-level simulation and processing.
//!
//! Times are integer picoseconds. Detector ids run 1..=4 per party
//! (A1 = H, A2 = V, A3 = D, A4 = A on Alice's side; B1..B4 the matching arms on
//! Bob's side).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::Scenario;
use crate::correction::MeasurementConfig;
use crate::error::{Error, Result};
use crate::protocol;
use crate::qstate::DensityMatrix;
use crate::tomography::poisson;

pub const PS_PER_S: u64 = 1_000_000_000_000;
pub const DEFAULT_WINDOW_PS: u64 = 1_000;
pub const DEFAULT_BIN_PS: u64 = 100;
pub const DEFAULT_SEARCH_RANGE_PS: u64 = 2_000_000;

/// Largest timestamp accepted; keeps all signed differences inside i64.
const MAX_TIME_PS: u64 = (i64::MAX / 4) as u64;

const BINARY_MAGIC: &[u8; 5] = b"TTAG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tag {
    pub time_ps: u64,
    pub detector: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimestampStream {
    pub party: Party,
    events: Vec<Tag>,
    pub duration_ps: u64,
}

impl TimestampStream {
    /// Validates ordering and detector ids.
    pub fn new(party: Party, events: Vec<Tag>, duration_ps: u64) -> Result<Self> {
        for (k, e) in events.iter().enumerate() {
            if !(1..=4).contains(&e.detector) {
                return Err(Error::Parse(format!(
                    "event {k}: detector id {} outside 1..=4",
                    e.detector
                )));
            }
            if e.time_ps > MAX_TIME_PS {
                return Err(Error::Parse(format!("event {k}: time {} out of range", e.time_ps)));
            }
            if k > 0 && e.time_ps < events[k - 1].time_ps {
                return Err(Error::Parse(format!(
                    "event {k}: time {} precedes {}",
                    e.time_ps,
                    events[k - 1].time_ps
                )));
            }
        }
        Ok(Self {
            party,
            events,
            duration_ps,
        })
    }

    pub fn from_unsorted(party: Party, mut events: Vec<Tag>, duration_ps: u64) -> Result<Self> {
        events.sort_unstable();
        Self::new(party, events, duration_ps)
    }

    pub fn events(&self) -> &[Tag] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn acquisition_seconds(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S as f64
    }

    /// Every timestamp moved by `delta_ps`; events pushed below zero are dropped.
    pub fn shifted(&self, delta_ps: i64) -> Self {
        let events = self
            .events
            .iter()
            .filter_map(|e| {
                let t = e.time_ps as i64 + delta_ps;
                (t >= 0).then_some(Tag {
                    time_ps: t as u64,
                    detector: e.detector,
                })
            })
            .collect();
        Self {
            party: self.party,
            events,
            duration_ps: self.duration_ps,
        }
    }

    pub fn singles(&self) -> [u64; 4] {
        let mut n = [0; 4];
        for e in &self.events {
            n[(e.detector - 1) as usize] += 1;
        }
        n
    }

    /// `TTAG1` followed by little-endian (u8 detector, u64 ps) records.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 9 * self.events.len());
        out.extend_from_slice(BINARY_MAGIC);
        for e in &self.events {
            out.push(e.detector);
            out.extend_from_slice(&e.time_ps.to_le_bytes());
        }
        out
    }

    pub fn from_binary(party: Party, bytes: &[u8]) -> Result<Self> {
        let body = bytes
            .strip_prefix(BINARY_MAGIC)
            .ok_or_else(|| Error::Parse("missing TTAG1 magic".into()))?;
        if body.len() % 9 != 0 {
            return Err(Error::Parse(format!(
                "truncated stream: {} trailing bytes",
                body.len() % 9
            )));
        }
        let events: Vec<Tag> = body
            .chunks_exact(9)
            .map(|r| Tag {
                detector: r[0],
                time_ps: u64::from_le_bytes(r[1..9].try_into().expect("8 bytes")),
            })
            .collect();
        let duration = events.last().map_or(0, |e| e.time_ps);
        Self::new(party, events, duration)
    }

    /// `detector,ps` debug form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "detector,ps")?;
        for e in &self.events {
            writeln!(w, "{},{}", e.detector, e.time_ps)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(party: Party, r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("detector")) {
                continue;
            }
            let (d, t) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `detector,ps`", n + 1)))?;
            let detector = d
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad detector `{d}`", n + 1)))?;
            let time_ps = t
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad time `{t}`", n + 1)))?;
            events.push(Tag { time_ps, detector });
        }
        let duration = events.last().map_or(0, |e| e.time_ps);
        Self::new(party, events, duration)
    }

    /// Reads binary or CSV depending on the file's leading bytes.
    pub fn load(party: Party, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(party, &bytes)
        } else {
            Self::read_csv(party, bytes.as_slice())
        }
    }

    /// Writes CSV when the extension is `.csv`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e == "csv") {
            let mut v = Vec::new();
            self.write_csv(&mut v).expect("writing to memory");
            v
        } else {
            self.to_binary()
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Bob's time tagger relative to Alice's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel {
    pub initial_offset_ps: i64,
    pub drift_ps_per_s: f64,
    /// Re-reference the local clock to a shared pulse-per-second signal.
    pub pps_discipline: bool,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            initial_offset_ps: 0,
            drift_ps_per_s: 0.0,
            pps_discipline: false,
        }
    }
}

impl ClockModel {
    /// Free-running local reading at true time `t_ps`.
    pub fn raw_local(&self, t_ps: f64) -> f64 {
        t_ps + self.initial_offset_ps as f64 + self.drift_ps_per_s * t_ps / PS_PER_S as f64
    }

    /// Recorded timestamp at true time `t_ps`.
    ///
    /// With PPS discipline the tagger also stamps each pulse, and every event is
    /// mapped by linear interpolation between the integer-picosecond stamps of
    /// the surrounding pulses onto the nominal second grid, which removes the
    /// rate error and leaves only the constant offset.
    pub fn tag_time(&self, t_ps: f64) -> i64 {
        if !self.pps_discipline {
            return self.raw_local(t_ps).round() as i64;
        }
        let second = (t_ps / PS_PER_S as f64).floor();
        let pulse = self.raw_local(second * PS_PER_S as f64).round();
        let next = self.raw_local((second + 1.0) * PS_PER_S as f64).round();
        let local = self.raw_local(t_ps);
        let frac = (local - pulse) * PS_PER_S as f64 / (next - pulse);
        (second * PS_PER_S as f64 + self.initial_offset_ps as f64 + frac).round() as i64
    }

    /// |recorded − (true + offset)| at time `t_ps`.
    pub fn residual_ps(&self, t_ps: f64) -> f64 {
        (self.tag_time(t_ps) as f64 - t_ps - self.initial_offset_ps as f64).abs()
    }
}

fn uniform_times<R: Rng>(rng: &mut R, rate: f64, duration_ps: u64) -> Vec<u64> {
    let n = poisson(rng, rate * duration_ps as f64 / PS_PER_S as f64);
    (0..n).map(|_| rng.random_range(0..duration_ps.max(1))).collect()
}

fn apply_dead_time(events: &mut Vec<Tag>, dead_time_ps: u64) {
    events.sort_unstable();
    if dead_time_ps == 0 {
        return;
    }
    let mut last: [Option<u64>; 5] = [None; 5];
    events.retain(|e| {
        let slot = &mut last[e.detector as usize];
        match *slot {
            Some(t) if e.time_ps - t < dead_time_ps => false,
            _ => {
                *slot = Some(e.time_ps);
                true
            }
        }
    });
}

/// Simulated Alice and Bob streams for one acquisition.
///
/// Pair emissions form a Poisson process at the source rate, thinned by each
/// arm's transmission × detector efficiency into coincident pairs and
/// one-sided singles. A coincident pair lands on (Ai, Bj) with the Born-rule
/// probabilities of `measurement`. Each detection gets Gaussian jitter; Bob's
/// detectors also see unpolarized background light, every detector sees dark
/// counts, and Bob's timestamps pass through the clock model. Dead time is
/// applied per detector. Deterministic for a fixed seed.
pub fn generate_streams(
    rho: &DensityMatrix,
    measurement: &MeasurementConfig,
    scenario: &Scenario,
    duration_s: f64,
    seed: u64,
) -> Result<(TimestampStream, TimestampStream)> {
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("duration must be positive, got {duration_s}")));
    }
    let duration_ps = (duration_s * PS_PER_S as f64).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let det = &scenario.detector;
    let eta_a = scenario.channel.alice_transmission * det.efficiency;
    let eta_b = scenario.channel.bob_transmission * det.efficiency;
    let rate = scenario.source.pair_rate;

    let joint = measurement.joint_probabilities(rho);
    let flat: Vec<f64> = joint.iter().flatten().map(|p| p.max(0.0)).collect();
    let alice_marg: Vec<f64> = joint.iter().map(|row| row.iter().sum::<f64>().max(0.0)).collect();
    let bob_marg: Vec<f64> = (0..4).map(|j| joint.iter().map(|r| r[j]).sum::<f64>().max(0.0)).collect();
    let pick = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::InvalidState(format!("outcome weights: {e}")));
    let joint_dist = pick(&flat)?;
    let alice_dist = pick(&alice_marg)?;
    let bob_dist = pick(&bob_marg)?;

    let jitter = if det.jitter_sigma_ps > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma_ps).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let jit = |rng: &mut ChaCha8Rng| jitter.map_or(0.0, |n| n.sample(rng));

    let mut alice = Vec::new();
    let mut bob = Vec::new();
    let push = |v: &mut Vec<Tag>, t: f64, d: usize| {
        if t >= 0.0 {
            v.push(Tag {
                time_ps: t.round() as u64,
                detector: d as u8 + 1,
            });
        }
    };

    for t in uniform_times(&mut rng, rate * eta_a * eta_b, duration_ps) {
        let k = joint_dist.sample(&mut rng);
        let ta = t as f64 + jit(&mut rng);
        let tb = t as f64 + jit(&mut rng);
        push(&mut alice, ta, k / 4);
        push(&mut bob, scenario.clock.tag_time(tb) as f64, k % 4);
    }
    for t in uniform_times(&mut rng, rate * eta_a * (1.0 - eta_b), duration_ps) {
        let i = alice_dist.sample(&mut rng);
        let ta = t as f64 + jit(&mut rng);
        push(&mut alice, ta, i);
    }
    for t in uniform_times(&mut rng, rate * (1.0 - eta_a) * eta_b, duration_ps) {
        let j = bob_dist.sample(&mut rng);
        let tb = t as f64 + jit(&mut rng);
        push(&mut bob, scenario.clock.tag_time(tb) as f64, j);
    }
    let background = scenario.noise.background_singles_rate_per_detector() * det.efficiency;
    let dark = scenario.noise.dark_count_rate;
    for d in 0..4 {
        for t in uniform_times(&mut rng, dark, duration_ps) {
            push(&mut alice, t as f64, d);
        }
        // Background and dark counts arrive directly on Bob's local timescale.
        for t in uniform_times(&mut rng, background + dark, duration_ps) {
            push(&mut bob, t as f64, d);
        }
    }
    apply_dead_time(&mut alice, det.dead_time_ps);
    apply_dead_time(&mut bob, det.dead_time_ps);
    Ok((
        TimestampStream::new(Party::Alice, alice, duration_ps)?,
        TimestampStream::new(Party::Bob, bob, duration_ps)?,
    ))
}

/// Calls `f` for every matched (Alice, Bob) pair.
///
/// Alice events are taken in time order; each is paired with the earliest
/// still-unmatched Bob event satisfying |t_a − (t_b − delay)| ≤ window/2.
/// Every event is used at most once.
pub fn for_each_match(
    a: &TimestampStream,
    b: &TimestampStream,
    delay_ps: i64,
    window_ps: u64,
    mut f: impl FnMut(&Tag, &Tag),
) {
    let be = b.events();
    let w = window_ps as i64;
    let mut j = 0;
    for ea in a.events() {
        let ta = ea.time_ps as i64;
        while j < be.len() && 2 * (be[j].time_ps as i64 - delay_ps - ta) < -w {
            j += 1;
        }
        if j < be.len() && 2 * (be[j].time_ps as i64 - delay_ps - ta) <= w {
            f(ea, &be[j]);
            j += 1;
        }
    }
}

/// C(Ai, Bj) over one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceTable {
    pub counts: [[u64; 4]; 4],
    pub window_ps: u64,
    pub delay_ps: i64,
    pub acquisition_seconds: f64,
}

impl CoincidenceTable {
    pub fn from_counts(counts: [[u64; 4]; 4], acquisition_seconds: f64) -> Self {
        Self {
            counts,
            window_ps: DEFAULT_WINDOW_PS,
            delay_ps: 0,
            acquisition_seconds,
        }
    }

    /// C(Ai, Bj) with 1-based detector numbers.
    pub fn get(&self, alice: usize, bob: usize) -> u64 {
        self.counts[alice - 1][bob - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Alice H/V arm against Bob D/A arm and vice versa.
    pub fn cross_basis_total(&self) -> u64 {
        let mut n = 0;
        for i in 0..4 {
            for j in 0..4 {
                if (i < 2) != (j < 2) {
                    n += self.counts[i][j];
                }
            }
        }
        n
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "window_ps={} delay_ps={} seconds={}\n",
            self.window_ps, self.delay_ps, self.acquisition_seconds
        );
        s.push_str("      B1       B2       B3       B4\n");
        for i in 0..4 {
            s.push_str(&format!("A{}", i + 1));
            for j in 0..4 {
                s.push_str(&format!(" {:>8}", self.counts[i][j]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn count_coincidences(
    a: &TimestampStream,
    b: &TimestampStream,
    delay_ps: i64,
    window_ps: u64,
) -> CoincidenceTable {
    let mut counts = [[0u64; 4]; 4];
    for_each_match(a, b, delay_ps, window_ps, |x, y| {
        counts[(x.detector - 1) as usize][(y.detector - 1) as usize] += 1;
    });
    CoincidenceTable {
        counts,
        window_ps,
        delay_ps,
        acquisition_seconds: a.acquisition_seconds().max(b.acquisition_seconds()),
    }
}

/// Delay of `b` relative to `a` from the peak of the cross-correlation histogram.
///
/// The histogram covers [−range, range) in bins of `bin_ps`. The peak must
/// reach three times the mean accidental level of the bins away from it. The
/// returned value is the floor-subtracted centroid of the bins around the
/// peak, which resolves the delay below one bin even with detector jitter.
pub fn find_delay(
    a: &TimestampStream,
    b: &TimestampStream,
    search_range_ps: u64,
    bin_ps: u64,
) -> Result<i64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStreams);
    }
    if bin_ps == 0 || search_range_ps == 0 {
        return Err(Error::Config("bin and search range must be positive".into()));
    }
    let range = search_range_ps as i64;
    let bin = bin_ps as i64;
    let nbins = ((2 * range + bin - 1) / bin) as usize;
    let mut hist = vec![0u64; nbins];
    let be = b.events();
    let mut start = 0;
    for ea in a.events() {
        let ta = ea.time_ps as i64;
        while start < be.len() && (be[start].time_ps as i64) - ta < -range {
            start += 1;
        }
        for eb in &be[start..] {
            let d = eb.time_ps as i64 - ta;
            if d >= range {
                break;
            }
            hist[((d + range) / bin) as usize] += 1;
        }
    }
    let (peak_bin, &peak) = hist
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
        .expect("non-empty histogram");
    let guard = (3_000 / bin).max(3) as usize;
    let (sum, n) = hist
        .iter()
        .enumerate()
        .filter(|(k, _)| k.abs_diff(peak_bin) > guard)
        .fold((0u64, 0u64), |(s, n), (_, &c)| (s + c, n + 1));
    let floor = if n > 0 { sum as f64 / n as f64 } else { 0.0 };
    if peak == 0 || (peak as f64) < 3.0 * floor {
        return Err(Error::NoPeak { peak, floor });
    }
    let half = (1_500 / bin).max(1) as usize;
    let lo = peak_bin.saturating_sub(half);
    let hi = (peak_bin + half).min(nbins - 1);
    let (mut wsum, mut xsum) = (0.0, 0.0);
    for (k, &count) in hist.iter().enumerate().take(hi + 1).skip(lo) {
        let w = (count as f64 - floor).max(0.0);
        let center = -range as f64 + (k as f64 + 0.5) * bin as f64;
        wsum += w;
        xsum += w * center;
    }
    Ok((xsum / wsum).round() as i64)
}

#[derive(Debug, Clone)]
pub struct WindowChoice {
    pub window_ps: u64,
    pub table: CoincidenceTable,
    /// False when no window met the QBER limit; the minimum-QBER window is returned instead.
    pub met: bool,
    /// (window, keyrate, qber) for every grid point with a defined QBER.
    pub scan: Vec<(u64, f64, f64)>,
}

/// Grid search for the window that maximizes keyrate subject to QBER ≤ `qber_limit`.
/// Ties go to the larger window.
pub fn optimize_window(
    a: &TimestampStream,
    b: &TimestampStream,
    delay_ps: i64,
    qber_limit: f64,
    window_grid: &[u64],
) -> Result<WindowChoice> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStreams);
    }
    if window_grid.is_empty() {
        return Err(Error::Config("empty window grid".into()));
    }
    let mut scan = Vec::new();
    let mut tables = Vec::new();
    for &w in window_grid {
        let table = count_coincidences(a, b, delay_ps, w);
        if let Ok(q) = protocol::qber(&table) {
            scan.push((w, protocol::keyrate(&table), q));
            tables.push(table);
        }
    }
    let best_ok = scan
        .iter()
        .enumerate()
        .filter(|(_, s)| s.2 <= qber_limit)
        .max_by(|x, y| x.1 .1.total_cmp(&y.1 .1).then(x.1 .0.cmp(&y.1 .0)));
    let (idx, met) = match best_ok {
        Some((k, _)) => (k, true),
        None => {
            let k = scan
                .iter()
                .enumerate()
                .min_by(|x, y| x.1 .2.total_cmp(&y.1 .2))
                .map(|(k, _)| k)
                .ok_or(Error::UndefinedQber)?;
            (k, false)
        }
    };
    Ok(WindowChoice {
        window_ps: scan[idx].0,
        table: tables.swap_remove(idx),
        met,
        scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::scenario_preset;
    use crate::qstate::bell_psi_plus;

    fn tags(v: &[(u8, u64)]) -> Vec<Tag> {
        v.iter().map(|&(d, t)| Tag { detector: d, time_ps: t }).collect()
    }

    fn quiet_scenario() -> Scenario {
        let mut s = scenario_preset("custom").unwrap();
        s.noise.daylight_factor = 0.0;
        s.noise.dark_count_rate = 0.0;
        s.detector.jitter_sigma_ps = 0.0;
        s.detector.dead_time_ps = 0;
        s.clock = ClockModel::default();
        s
    }

    #[test]
    fn stream_validation() {
        assert!(TimestampStream::new(Party::Alice, tags(&[(1, 5), (2, 3)]), 10).is_err());
        assert!(TimestampStream::new(Party::Alice, tags(&[(0, 5)]), 10).is_err());
        assert!(TimestampStream::new(Party::Alice, tags(&[(5, 5)]), 10).is_err());
        assert!(TimestampStream::new(Party::Alice, tags(&[(1, 3), (4, 3)]), 10).is_ok());
    }

    #[test]
    fn binary_and_csv_formats() {
        let s = TimestampStream::new(Party::Bob, tags(&[(1, 7), (4, 9_000_000_000_000)]), 0).unwrap();
        let bin = s.to_binary();
        assert_eq!(&bin[..5], b"TTAG1");
        assert_eq!(bin.len(), 5 + 18);
        assert_eq!(bin[5], 1);
        assert_eq!(&bin[6..14], &7u64.to_le_bytes());
        let back = TimestampStream::from_binary(Party::Bob, &bin).unwrap();
        assert_eq!(back.events(), s.events());

        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv.clone()).unwrap(), "detector,ps\n1,7\n4,9000000000000\n");
        assert_eq!(TimestampStream::read_csv(Party::Bob, csv.as_slice()).unwrap().events(), s.events());

        let mut bad = b"TTAG1".to_vec();
        bad.push(1);
        bad.extend_from_slice(&10u64.to_le_bytes());
        bad.push(1);
        bad.extend_from_slice(&5u64.to_le_bytes());
        assert!(TimestampStream::from_binary(Party::Bob, &bad).is_err());
        assert!(TimestampStream::read_csv(Party::Bob, "detector,ps\n1,10\n1,5\n".as_bytes()).is_err());
    }

    #[test]
    fn zero_rate_gives_empty_streams() {
        let mut s = quiet_scenario();
        s.channel.alice_transmission = 0.0;
        s.channel.bob_transmission = 0.0;
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let (a, b) = generate_streams(&rho, &MeasurementConfig::conventional(), &s, 1.0, 1).unwrap();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn ideal_bell_conventional_has_no_errors() {
        let s = quiet_scenario();
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let (a, b) = generate_streams(&rho, &MeasurementConfig::conventional(), &s, 0.2, 4).unwrap();
        let t = count_coincidences(&a, &b, 0, 1);
        assert!(t.total() > 100);
        for (i, j) in crate::correction::ERROR_PAIRS {
            assert_eq!(t.counts[i][j], 0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = scenario_preset("day-sunny-10nm").unwrap();
        let rho = s.source.state().unwrap();
        let m = MeasurementConfig::conventional();
        let x = generate_streams(&rho, &m, &s, 0.05, 77).unwrap();
        let y = generate_streams(&rho, &m, &s, 0.05, 77).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dead_time_drops_close_events() {
        let mut v = tags(&[(1, 0), (1, 10), (2, 15), (1, 40)]);
        apply_dead_time(&mut v, 30);
        assert_eq!(v, tags(&[(1, 0), (2, 15), (1, 40)]));
    }

    #[test]
    fn pps_discipline_bounds_residual() {
        let free = ClockModel {
            initial_offset_ps: 5_000,
            drift_ps_per_s: 10_000.0,
            pps_discipline: false,
        };
        let disciplined = ClockModel { pps_discipline: true, ..free };
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let t = k as f64 * 9.973e9 + 0.5;
            worst = worst.max(disciplined.residual_ps(t));
        }
        assert!(worst < 1_000.0, "{worst}");
        assert!(free.residual_ps(9.5e12) > 90_000.0);
    }

    #[test]
    fn matching_boundaries() {
        let a = TimestampStream::new(Party::Alice, tags(&[(1, 1_000), (2, 5_000)]), 10_000).unwrap();
        let same = TimestampStream::new(Party::Bob, tags(&[(1, 1_000), (2, 5_000)]), 10_000).unwrap();
        assert_eq!(count_coincidences(&a, &same, 0, 100).total(), 2);

        // separated by exactly the window: outside the closed half-window
        let apart = TimestampStream::new(Party::Bob, tags(&[(1, 1_100)]), 10_000).unwrap();
        assert_eq!(count_coincidences(&a, &apart, 0, 100).total(), 0);
        // exactly half a window away: inside
        let edge = TimestampStream::new(Party::Bob, tags(&[(1, 1_050)]), 10_000).unwrap();
        assert_eq!(count_coincidences(&a, &edge, 0, 100).total(), 1);
    }

    #[test]
    fn each_event_matched_once() {
        let a = TimestampStream::new(Party::Alice, tags(&[(1, 100), (2, 110)]), 1_000).unwrap();
        let b = TimestampStream::new(Party::Bob, tags(&[(3, 105)]), 1_000).unwrap();
        let t = count_coincidences(&a, &b, 0, 40);
        assert_eq!(t.total(), 1);
        assert_eq!(t.get(1, 3), 1);
    }

    #[test]
    fn delay_of_shifted_copy() {
        let s = quiet_scenario();
        let rho = DensityMatrix::werner(0.9);
        let (a, _) = generate_streams(&rho, &MeasurementConfig::conventional(), &s, 0.01, 8).unwrap();
        let b = a.shifted(1_234_000);
        let d = find_delay(&a, &b, 2_000_000, 100).unwrap();
        assert!((d - 1_234_000).abs() <= 100, "{d}");
        let d0 = find_delay(&a, &a, 1_000_000, 100).unwrap();
        assert!(d0.abs() <= 100);
    }

    #[test]
    fn background_only_has_no_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng, party| {
            let v = (0..200_000)
                .map(|_| Tag { time_ps: rng.random_range(0..PS_PER_S / 10), detector: rng.random_range(1..=4) })
                .collect();
            TimestampStream::from_unsorted(party, v, PS_PER_S / 10).unwrap()
        };
        let a = mk(&mut rng, Party::Alice);
        let b = mk(&mut rng, Party::Bob);
        assert!(matches!(find_delay(&a, &b, 1_000_000, 100), Err(Error::NoPeak { .. })));
    }

    #[test]
    fn window_search() {
        let s = quiet_scenario();
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let m = MeasurementConfig::conventional();
        let (a, b) = generate_streams(&rho, &m, &s, 0.2, 2).unwrap();
        let grid = [200, 500, 1_000, 2_000];
        let choice = optimize_window(&a, &b, 0, 11.0, &grid).unwrap();
        assert!(choice.met);
        assert_eq!(choice.window_ps, 2_000);

        let mut noisy = scenario_preset("day-sunny-10nm").unwrap();
        noisy.clock = ClockModel::default();
        noisy.noise.daylight_factor = 15.0;
        let (a, b) = generate_streams(&rho, &m, &noisy, 0.2, 2).unwrap();
        let grid = [250, 500, 1_000, 2_000, 4_000, 8_000];
        let choice = optimize_window(&a, &b, 0, 11.0, &grid).unwrap();
        assert!(choice.met);
        assert!(choice.window_ps < 8_000);
        assert!(protocol::qber(&choice.table).unwrap() <= 11.0);

        let strict = optimize_window(&a, &b, 0, 0.0, &grid).unwrap();
        assert!(!strict.met);
        let empty = TimestampStream::new(Party::Bob, vec![], 0).unwrap();
        assert!(matches!(optimize_window(&a, &empty, 0, 11.0, &grid), Err(Error::EmptyStreams)));
    }
}
