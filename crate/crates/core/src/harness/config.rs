//! Run configuration: `[section]` headers with `key = value` lines.
//!
//! Scenario parameters are taken from a named preset; any key in the
//! `[source]`, `[channel]`, `[noise]`, `[detector]` or `[clock]` sections
//! overrides the preset value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::{euler_unitary, scenario_preset, Drift, Scenario};
use crate::correction::BasisMode;
use crate::error::{Error, Result};
use crate::protocol::DEFAULT_QBER_LIMIT;
use crate::timetag::{DEFAULT_BIN_PS, DEFAULT_SEARCH_RANGE_PS, DEFAULT_WINDOW_PS};

pub const OUT_DIR_ENV: &str = "QKDSIM_OUT_DIR";

const SCENARIO_KEYS: &[(&str, &[&str])] = &[
    (
        "source",
        &[
            "pair_rate",
            "fidelity",
            "concurrence",
            "drift_concurrence_amplitude",
            "drift_scrambler_deg",
            "drift_period_hours",
        ],
    ),
    (
        "channel",
        &[
            "scrambler_euler_deg",
            "alice_transmission",
            "bob_transmission",
            "transmission_fluctuation",
            "free_space_length_m",
        ],
    ),
    (
        "noise",
        &["background_rate_10nm", "filter_fwhm_nm", "daylight_factor", "dark_count_rate"],
    ),
    ("detector", &["efficiency", "jitter_sigma_ps", "dead_time_ps"]),
    ("clock", &["initial_offset_ps", "drift_ps_per_s", "pps_discipline"]),
];

/// Day/night split of the 24 h cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub day_start_hour: f64,
    pub day_end_hour: f64,
    pub slot_hours: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            day_start_hour: 8.0,
            day_end_hour: 18.0,
            slot_hours: 2.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        for (name, h) in [("day_start_hour", self.day_start_hour), ("day_end_hour", self.day_end_hour)] {
            if !(0.0..24.0).contains(&h) {
                return Err(Error::Config(format!("{name} = {h} outside [0, 24)")));
            }
        }
        if !(self.slot_hours > 0.0 && self.slot_hours <= 24.0) {
            return Err(Error::Config(format!("slot_hours = {} outside (0, 24]", self.slot_hours)));
        }
        Ok(())
    }

    /// Daytime covers [start, end); a start after the end wraps midnight.
    pub fn is_day(&self, hour: f64) -> bool {
        let h = hour.rem_euclid(24.0);
        if self.day_start_hour <= self.day_end_hour {
            h >= self.day_start_hour && h < self.day_end_hour
        } else {
            h >= self.day_start_hour || h < self.day_end_hour
        }
    }

    /// Start hour of every slot in a 24 h cycle.
    pub fn slots(&self) -> Vec<f64> {
        let n = (24.0 / self.slot_hours).floor() as usize;
        (0..n).map(|k| k as f64 * self.slot_hours).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset used by single-session runs.
    pub scenario: String,
    pub day_scenario: String,
    pub night_scenario: String,
    /// `section.key` → value, applied on top of every preset.
    pub overrides: BTreeMap<String, String>,
    /// Wall-clock hour of a single-session run.
    pub hour: f64,
    pub acquisition_seconds: f64,
    pub samples_per_session: usize,
    pub seed: u64,
    pub basis_modes: Vec<BasisMode>,
    pub output_dir: PathBuf,
    pub schedule: Schedule,
    pub tomography_seconds_per_projection: f64,
    pub coincidence_window_ps: u64,
    pub correlation_bin_ps: u64,
    pub search_range_ps: u64,
    pub qber_limit: f64,
    pub optimize_window: bool,
    pub window_grid_ps: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "night-clear-10nm".into(),
            day_scenario: "day-sunny-10nm".into(),
            night_scenario: "night-clear-10nm".into(),
            overrides: BTreeMap::new(),
            hour: 0.0,
            acquisition_seconds: 10.0,
            samples_per_session: 30,
            seed: 20_240_611,
            basis_modes: vec![BasisMode::Conventional, BasisMode::Corrected],
            output_dir: PathBuf::from("qkdsim-out"),
            schedule: Schedule::default(),
            tomography_seconds_per_projection: 5.0,
            coincidence_window_ps: DEFAULT_WINDOW_PS,
            correlation_bin_ps: DEFAULT_BIN_PS,
            search_range_ps: DEFAULT_SEARCH_RANGE_PS,
            qber_limit: DEFAULT_QBER_LIMIT,
            optimize_window: false,
            window_grid_ps: vec![250, 500, 750, 1_000, 1_500, 2_000, 3_000],
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .replace('_', "")
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn strip_comment(line: &str) -> &str {
    let cut = line
        .char_indices()
        .find(|&(i, ch)| (ch == '#' || ch == ';') && (i == 0 || line[..i].ends_with(char::is_whitespace)))
        .map_or(line.len(), |(i, _)| i);
    line[..cut].trim()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header `{line}`")))?
                    .trim();
                if name != "run" && !SCENARIO_KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match section.as_str() {
                "" => return Err(at("key outside any section".into())),
                "run" => cfg.set_run_key(key, value).map_err(|e| at(e.to_string()))?,
                s => {
                    let known = SCENARIO_KEYS
                        .iter()
                        .find(|(name, _)| *name == s)
                        .is_some_and(|(_, keys)| keys.contains(&key));
                    if !known {
                        return Err(at(format!("unknown key `{key}` in [{s}]")));
                    }
                    cfg.overrides.insert(format!("{s}.{key}"), value.to_string());
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set_run_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = value.to_string(),
            "day_scenario" => self.day_scenario = value.to_string(),
            "night_scenario" => self.night_scenario = value.to_string(),
            "hour" => self.hour = parse_num(key, value)?,
            "acquisition_seconds" => self.acquisition_seconds = parse_num(key, value)?,
            "samples_per_session" => self.samples_per_session = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "basis_modes" => {
                self.basis_modes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(BasisMode::from_str)
                    .collect::<Result<_>>()?
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "day_start_hour" => self.schedule.day_start_hour = parse_num(key, value)?,
            "day_end_hour" => self.schedule.day_end_hour = parse_num(key, value)?,
            "slot_hours" => self.schedule.slot_hours = parse_num(key, value)?,
            "tomography_seconds_per_projection" => {
                self.tomography_seconds_per_projection = parse_num(key, value)?
            }
            "coincidence_window_ps" => self.coincidence_window_ps = parse_num(key, value)?,
            "correlation_bin_ps" => self.correlation_bin_ps = parse_num(key, value)?,
            "search_range_ps" => self.search_range_ps = parse_num(key, value)?,
            "qber_limit" => self.qber_limit = parse_num(key, value)?,
            "optimize_window" => self.optimize_window = parse_bool(key, value)?,
            "window_grid_ps" => self.window_grid_ps = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}` in [run]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.acquisition_seconds > 0.0) {
            return Err(Error::Config("acquisition_seconds must be positive".into()));
        }
        if self.samples_per_session == 0 {
            return Err(Error::Config("samples_per_session must be at least 1".into()));
        }
        if self.basis_modes.is_empty() {
            return Err(Error::Config("basis_modes is empty".into()));
        }
        if !(0.0..24.0).contains(&self.hour) {
            return Err(Error::Config(format!("hour = {} outside [0, 24)", self.hour)));
        }
        if !(self.tomography_seconds_per_projection > 0.0) {
            return Err(Error::Config("tomography_seconds_per_projection must be positive".into()));
        }
        if self.coincidence_window_ps == 0 || self.correlation_bin_ps == 0 || self.search_range_ps == 0 {
            return Err(Error::Config("window, bin and search range must be positive".into()));
        }
        if self.optimize_window && self.window_grid_ps.is_empty() {
            return Err(Error::Config("window_grid_ps is empty".into()));
        }
        for name in [&self.scenario, &self.day_scenario, &self.night_scenario] {
            self.resolve_scenario(name)?;
        }
        Ok(())
    }

    /// Preset `name` with this configuration's overrides applied.
    pub fn resolve_scenario(&self, name: &str) -> Result<Scenario> {
        let mut s = scenario_preset(name)?;
        apply_overrides(&mut s, &self.overrides)?;
        Ok(s)
    }

    /// `QKDSIM_OUT_DIR` replaces the configured output directory when set.
    pub fn with_env_output_dir(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }
}

fn apply_overrides(s: &mut Scenario, overrides: &BTreeMap<String, String>) -> Result<()> {
    let mut drift = s.source.drift.unwrap_or(Drift {
        concurrence_amplitude: 0.0,
        scrambler_amplitude: 0.0,
        period_hours: 24.0,
    });
    let mut drift_set = false;
    for (key, value) in overrides {
        let v = value.as_str();
        match key.as_str() {
            "source.pair_rate" => s.source.pair_rate = parse_num(key, v)?,
            "source.fidelity" => s.source.target_fidelity = parse_num(key, v)?,
            "source.concurrence" => s.source.target_concurrence = parse_num(key, v)?,
            "source.drift_concurrence_amplitude" => {
                drift.concurrence_amplitude = parse_num(key, v)?;
                drift_set = true;
            }
            "source.drift_scrambler_deg" => {
                drift.scrambler_amplitude = parse_num::<f64>(key, v)?.to_radians();
                drift_set = true;
            }
            "source.drift_period_hours" => {
                drift.period_hours = parse_num(key, v)?;
                drift_set = true;
            }
            "channel.scrambler_euler_deg" => {
                let angles: Vec<f64> = parse_list(key, v)?;
                let [a, b, c] = <[f64; 3]>::try_from(angles)
                    .map_err(|_| Error::Config(format!("{key}: expected three angles")))?;
                s.channel.bob_unitary = euler_unitary(a.to_radians(), b.to_radians(), c.to_radians());
            }
            "channel.alice_transmission" => s.channel.alice_transmission = parse_num(key, v)?,
            "channel.bob_transmission" => s.channel.bob_transmission = parse_num(key, v)?,
            "channel.transmission_fluctuation" => s.channel.transmission_fluctuation = parse_num(key, v)?,
            "channel.free_space_length_m" => s.channel.free_space_length_m = parse_num(key, v)?,
            "noise.background_rate_10nm" => s.noise.background_rate_10nm = parse_num(key, v)?,
            "noise.filter_fwhm_nm" => s.noise.filter_fwhm_nm = parse_num(key, v)?,
            "noise.daylight_factor" => s.noise.daylight_factor = parse_num(key, v)?,
            "noise.dark_count_rate" => s.noise.dark_count_rate = parse_num(key, v)?,
            "detector.efficiency" => s.detector.efficiency = parse_num(key, v)?,
            "detector.jitter_sigma_ps" => s.detector.jitter_sigma_ps = parse_num(key, v)?,
            "detector.dead_time_ps" => s.detector.dead_time_ps = parse_num(key, v)?,
            "clock.initial_offset_ps" => s.clock.initial_offset_ps = parse_num(key, v)?,
            "clock.drift_ps_per_s" => s.clock.drift_ps_per_s = parse_num(key, v)?,
            "clock.pps_discipline" => s.clock.pps_discipline = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
    }
    if drift_set {
        if !(drift.period_hours > 0.0) {
            return Err(Error::Config("source.drift_period_hours must be positive".into()));
        }
        s.source.drift = Some(drift);
    }
    validate_scenario(s)
}

fn validate_scenario(s: &Scenario) -> Result<()> {
    if !(s.source.pair_rate > 0.0) {
        return Err(Error::Config("source.pair_rate must be positive".into()));
    }
    s.source.state().map_err(|e| Error::Config(e.to_string()))?;
    for (name, t) in [
        ("channel.alice_transmission", s.channel.alice_transmission),
        ("channel.bob_transmission", s.channel.bob_transmission),
    ] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("{name} = {t} outside [0, 1]")));
        }
    }
    if !(s.channel.transmission_fluctuation >= 0.0) {
        return Err(Error::Config("channel.transmission_fluctuation must be non-negative".into()));
    }
    s.noise.validate()?;
    s.detector.validate()
}

/// Documented configuration reproducing the built-in defaults.
pub fn default_config_text() -> String {
    let d = RunConfig::default();
    let night = scenario_preset(&d.night_scenario).expect("built-in preset");
    let [a, b, c] = crate::channel::PRESET_SCRAMBLER_EULER_DEG;
    let text = format!(
        "\
# qkdsim configuration
# Lines are `key = value`; `#` starts a comment. Every key is optional.

[run]
# preset for `qkdsim run`: night-clear-10nm, day-sunny-10nm, day-rain-3nm, night-rain-10nm, custom
scenario = {scenario}
# presets used by `qkdsim daily` for slots inside / outside the daytime window
day_scenario = {day}
night_scenario = {night_name}
# hour of day for a single-session run
hour = {hour}
# duration of one sample in seconds
acquisition_seconds = {acq}
samples_per_session = {samples}
seed = {seed}
# comma-separated subset of: conventional, corrected
basis_modes = conventional, corrected
output_dir = {out}
# daytime is [day_start_hour, day_end_hour)
day_start_hour = {ds}
day_end_hour = {de}
slot_hours = {slot}
# integration time of each of the 36 tomography projections
tomography_seconds_per_projection = {tomo}
# full coincidence window (|t_a - t_b| <= window / 2)
coincidence_window_ps = {win}
# cross-correlation histogram bin and half-range for the delay search
correlation_bin_ps = {bin}
search_range_ps = {range}
# QBER (percent) below which a sample counts as secure
qber_limit = {limit}
# pick the window from window_grid_ps that maximizes keyrate with QBER <= qber_limit
optimize_window = false
window_grid_ps = {grid}

# The sections below override every selected preset. Uncomment a key to use
# it; the values shown are those of the night-clear-10nm preset.

[source]
# emitted pairs per second
pair_rate = {rate}
# overlap with Psi+ and concurrence of the delivered two-photon state
fidelity = {fid}
concurrence = {conc}
# optional sinusoidal drift over the day
drift_concurrence_amplitude = 0
drift_scrambler_deg = 0
drift_period_hours = 24

[channel]
# Bob's fixed polarization scrambling, Rz(a) Ry(b) Rz(c) in degrees
scrambler_euler_deg = {a}, {b}, {c}
alice_transmission = {ta}
bob_transmission = {tb}
# relative spread of Bob's transmission between samples
transmission_fluctuation = {fluct}
free_space_length_m = {len}

[noise]
# background singles per Bob detector with a 10 nm filter in full daylight
background_rate_10nm = {bg}
filter_fwhm_nm = {fwhm}
# 1 for full daylight; night presets use {nf}
daylight_factor = {dl}
# per detector, all eight detectors
dark_count_rate = {dark}

[detector]
efficiency = {eff}
jitter_sigma_ps = {jit}
dead_time_ps = {dead}

[clock]
# Bob's tagger relative to Alice's
initial_offset_ps = {off}
drift_ps_per_s = {drift}
pps_discipline = {pps}
",
        scenario = d.scenario,
        day = d.day_scenario,
        night_name = d.night_scenario,
        hour = d.hour,
        acq = d.acquisition_seconds,
        samples = d.samples_per_session,
        seed = d.seed,
        out = d.output_dir.display(),
        ds = d.schedule.day_start_hour,
        de = d.schedule.day_end_hour,
        slot = d.schedule.slot_hours,
        tomo = d.tomography_seconds_per_projection,
        win = d.coincidence_window_ps,
        bin = d.correlation_bin_ps,
        range = d.search_range_ps,
        limit = d.qber_limit,
        grid = d.window_grid_ps.iter().map(u64::to_string).collect::<Vec<_>>().join(", "),
        rate = night.source.pair_rate,
        fid = night.source.target_fidelity,
        conc = night.source.target_concurrence,
        ta = night.channel.alice_transmission,
        tb = night.channel.bob_transmission,
        fluct = night.channel.transmission_fluctuation,
        len = night.channel.free_space_length_m,
        bg = night.noise.background_rate_10nm,
        fwhm = night.noise.filter_fwhm_nm,
        nf = crate::channel::NIGHT_DAYLIGHT_FACTOR,
        dl = night.noise.daylight_factor,
        dark = night.noise.dark_count_rate,
        eff = night.detector.efficiency,
        jit = night.detector.jitter_sigma_ps,
        dead = night.detector.dead_time_ps,
        off = night.clock.initial_offset_ps,
        drift = night.clock.drift_ps_per_s,
        pps = night.clock.pps_discipline,
    );
    let mut out = String::new();
    let mut in_run = false;
    for line in text.lines() {
        if line.starts_with('[') {
            in_run = line == "[run]";
        }
        if !in_run && line.contains(" = ") && !line.starts_with('#') {
            out.push_str("# ");
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn run_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# header\n[run]\nscenario = day-rain-3nm  # inline\nseed = 1_000\nbasis_modes = corrected\n\
             optimize_window = yes\nwindow_grid_ps = 100, 200\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario, "day-rain-3nm");
        assert_eq!(cfg.seed, 1000);
        assert_eq!(cfg.basis_modes, vec![BasisMode::Corrected]);
        assert!(cfg.optimize_window);
        assert_eq!(cfg.window_grid_ps, vec![100, 200]);
    }

    #[test]
    fn overrides_reach_scenario() {
        let cfg = RunConfig::parse(
            "[noise]\nfilter_fwhm_nm = 3\n[channel]\nscrambler_euler_deg = 0, 0, 0\n[source]\ndrift_scrambler_deg = 5\n",
        )
        .unwrap();
        let s = cfg.resolve_scenario("day-sunny-10nm").unwrap();
        assert_eq!(s.noise.filter_fwhm_nm, 3.0);
        assert!(s.channel.bob_unitary.matrix().iter().zip(nalgebra::Matrix2::<crate::qstate::C64>::identity().iter()).all(|(x, y)| (x - y).norm() < 1e-12));
        assert!((s.source.drift.unwrap().scrambler_amplitude - 5f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn errors_are_config_errors() {
        for bad in [
            "seed = 1\n",
            "[run]\nseed = x\n",
            "[run]\nunknown = 1\n",
            "[weather]\n",
            "[run]\nscenario = mars\n",
            "[run]\nbasis_modes = both\n",
            "[run]\nacquisition_seconds = 0\n",
            "[run]\nday_start_hour = 25\n",
            "[noise]\nfilter_fwhm_nm = -1\n",
            "[source]\nfidelity = 0.99\n",
            "[channel]\nscrambler_euler_deg = 1, 2\n",
            "[run\n",
        ] {
            let err = RunConfig::parse(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad:?} gave {err}");
        }
    }

    #[test]
    fn generated_default_parses_to_default() {
        let text = default_config_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());

        // uncommenting every override reproduces the night preset exactly
        let start = text.find("[source]").unwrap();
        let uncommented: String = text[start..]
            .lines()
            .map(|l| l.strip_prefix("# ").filter(|r| r.contains(" = ")).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = RunConfig::parse(&uncommented).unwrap();
        let mut got = cfg.resolve_scenario("night-clear-10nm").unwrap();
        assert_eq!(got.source.drift.unwrap().scrambler_amplitude, 0.0);
        got.source.drift = None;
        assert_eq!(got, scenario_preset("night-clear-10nm").unwrap());
    }

    #[test]
    fn schedule_mapping() {
        let s = Schedule::default();
        assert_eq!(s.slots().len(), 12);
        assert!(s.is_day(8.0) && s.is_day(16.0));
        assert!(!s.is_day(18.0) && !s.is_day(6.0) && !s.is_day(0.0));
        let wrap = Schedule { day_start_hour: 20.0, day_end_hour: 4.0, slot_hours: 1.0 };
        assert!(wrap.is_day(22.0) && wrap.is_day(2.0) && !wrap.is_day(12.0));
    }
}
