//! Python bindings for qkdsim-core.

use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::Matrix4;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qkdsim_core::channel::{self, euler_unitary, scenario_preset};
use qkdsim_core::correction::{self, BasisMode, CorrectedBasisSet, MeasurementConfig};
use qkdsim_core::harness::{self, RunConfig, SessionReport};
use qkdsim_core::optics;
use qkdsim_core::protocol;
use qkdsim_core::qstate::{self, bell_psi_plus, PolarizationState, C64};
use qkdsim_core::timetag::{self, CoincidenceTable, Party, Tag, TimestampStream};
use qkdsim_core::tomography::{self, TomographyRecord};
use qkdsim_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Two-qubit density matrix in the (HH, HV, VH, VV) basis, Alice first.
#[pyclass(name = "DensityMatrix", module = "qkdsim", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix(qstate::DensityMatrix);

#[pymethods]
impl PyDensityMatrix {
    /// Validates a 4×4 nested list of complex numbers.
    #[new]
    fn new(rows: Vec<Vec<C64>>) -> PyResult<Self> {
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(PyValueError::new_err("expected a 4x4 matrix"));
        }
        let m = Matrix4::from_fn(|i, j| rows[i][j]);
        qstate::DensityMatrix::new(m).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn werner(p: f64) -> Self {
        Self(qstate::DensityMatrix::werner(p))
    }

    #[staticmethod]
    fn bell_psi_plus() -> Self {
        Self(qstate::DensityMatrix::pure(&bell_psi_plus()))
    }

    #[staticmethod]
    fn maximally_mixed() -> Self {
        Self(qstate::DensityMatrix::maximally_mixed())
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        qstate::DensityMatrix::from_text(text).map(Self).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn to_list(&self) -> Vec<Vec<C64>> {
        let m = self.0.matrix();
        (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
    }

    fn fidelity_psi_plus(&self) -> f64 {
        qstate::fidelity_with_pure(&self.0, &bell_psi_plus())
    }

    fn concurrence(&self) -> f64 {
        qstate::concurrence(&self.0)
    }

    fn purity(&self) -> f64 {
        qstate::purity(&self.0)
    }

    fn eigenvalues(&self) -> PyResult<Vec<f64>> {
        qstate::eigendecompose(&self.0).map(|e| e.eigenvalues.to_vec()).map_err(py_err)
    }

    /// Largest eigenvalue, i.e. the overlap with the nearest pure state.
    fn nearest_pure_fidelity(&self) -> PyResult<f64> {
        qstate::nearest_pure_state(&self.0).map(|n| n.fidelity).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "DensityMatrix(fidelity_psi_plus={:.6}, concurrence={:.6})",
            self.fidelity_psi_plus(),
            self.concurrence()
        )
    }
}

fn state(h: C64, v: C64) -> PyResult<PolarizationState> {
    PolarizationState::new(h, v).map_err(py_err)
}

fn amplitudes(p: &PolarizationState) -> (C64, C64) {
    let [h, v] = p.amplitudes();
    (h, v)
}

fn mode(name: &str) -> PyResult<BasisMode> {
    BasisMode::from_str(name).map_err(py_err)
}

fn measurement(rho: &qstate::DensityMatrix, name: &str) -> PyResult<MeasurementConfig> {
    Ok(match mode(name)? {
        BasisMode::Conventional => MeasurementConfig::conventional(),
        BasisMode::Corrected => MeasurementConfig::corrected(&correction::derive_corrected_bases(rho).map_err(py_err)?),
    })
}

/// Source state with the given overlap with Ψ+ and concurrence.
#[pyfunction]
fn build_source_state(fidelity: f64, concurrence: f64) -> PyResult<PyDensityMatrix> {
    channel::build_source_state(fidelity, concurrence).map(PyDensityMatrix).map_err(py_err)
}

/// Applies Rz(a)·Ry(b)·Rz(c) (degrees) to Bob's qubit.
#[pyfunction]
fn scramble(rho: &PyDensityMatrix, euler_deg: (f64, f64, f64)) -> PyResult<PyDensityMatrix> {
    let (a, b, c) = euler_deg;
    let u = euler_unitary(a.to_radians(), b.to_radians(), c.to_radians());
    channel::scramble(&rho.0, &u).map(PyDensityMatrix).map_err(py_err)
}

/// (hwp_deg, qwp_deg) that send |H⟩ to the target polarization.
#[pyfunction]
fn solve_waveplate_angles(h: C64, v: C64) -> PyResult<(f64, f64)> {
    optics::solve_waveplate_angles(&state(h, v)?)
        .map(|s| s.degrees())
        .map_err(py_err)
}

/// Transmitted and reflected analyzer states for a waveplate setting in degrees.
#[pyfunction]
fn pbs_projectors(hwp_deg: f64, qwp_deg: f64) -> ((C64, C64), (C64, C64)) {
    let (t, r) = optics::pbs_projectors(&optics::WaveplateSetting::from_degrees(hwp_deg, qwp_deg));
    (amplitudes(&t), amplitudes(&r))
}

fn bases_dict<'py>(py: Python<'py>, b: &CorrectedBasisSet) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("phi_h", amplitudes(&b.phi_h))?;
    d.set_item("phi_v", amplitudes(&b.phi_v))?;
    d.set_item("phi_d", amplitudes(&b.phi_d))?;
    d.set_item("phi_a", amplitudes(&b.phi_a))?;
    d.set_item("hv_setting_deg", b.hv_setting.degrees())?;
    d.set_item("da_setting_deg", b.da_setting.degrees())?;
    d.set_item("source_fidelity", b.source_fidelity)?;
    d.set_item("concurrence", b.concurrence)?;
    d.set_item("low_concurrence_warning", b.low_concurrence_warning)?;
    d.set_item("report", b.report())?;
    Ok(d)
}

#[pyfunction]
fn derive_corrected_bases<'py>(py: Python<'py>, rho: &PyDensityMatrix) -> PyResult<Bound<'py, PyDict>> {
    let b = correction::derive_corrected_bases(&rho.0).map_err(py_err)?;
    bases_dict(py, &b)
}

/// Born-rule QBER in percent; `mode` is "conventional" or "corrected".
#[pyfunction]
#[pyo3(signature = (rho, mode = "corrected"))]
fn predicted_qber(rho: &PyDensityMatrix, mode: &str) -> PyResult<f64> {
    Ok(correction::predicted_qber(&rho.0, &measurement(&rho.0, mode)?))
}

/// Poisson-sampled tomography record as text (`tomo-v1` format).
#[pyfunction]
#[pyo3(signature = (rho, pair_rate, seconds_per_projection = 1.0, seed = 0))]
fn simulate_tomography(rho: &PyDensityMatrix, pair_rate: f64, seconds_per_projection: f64, seed: u64) -> PyResult<String> {
    tomography::simulate_tomography(&rho.0, pair_rate, seconds_per_projection, seed)
        .map(|r| r.to_text())
        .map_err(py_err)
}

/// Reconstructs a state from a `tomo-v1` record; returns (state, max_residual).
#[pyfunction]
fn reconstruct(record: &str) -> PyResult<(PyDensityMatrix, f64)> {
    let rec = TomographyRecord::from_text(record).map_err(py_err)?;
    let r = tomography::reconstruct(&rec).map_err(py_err)?;
    Ok((PyDensityMatrix(r.state), r.max_residual))
}

fn to_stream(party: Party, events: Vec<(u8, u64)>) -> PyResult<TimestampStream> {
    let tags = events.into_iter().map(|(detector, time_ps)| Tag { detector, time_ps }).collect();
    TimestampStream::from_unsorted(party, tags, 0).map_err(py_err)
}

fn from_stream(s: &TimestampStream) -> Vec<(u8, u64)> {
    s.events().iter().map(|e| (e.detector, e.time_ps)).collect()
}

/// Simulated (alice, bob) event lists of (detector, ps) for a preset.
#[pyfunction]
#[pyo3(signature = (preset = "night-clear-10nm", mode = "corrected", seconds = 1.0, seed = 0))]
fn generate_streams(preset: &str, mode: &str, seconds: f64, seed: u64) -> PyResult<(Vec<(u8, u64)>, Vec<(u8, u64)>)> {
    let s = scenario_preset(preset).map_err(py_err)?;
    let rho = channel::scramble(&s.source.state().map_err(py_err)?, &s.channel.bob_unitary).map_err(py_err)?;
    let m = measurement(&rho, mode)?;
    let (a, b) = timetag::generate_streams(&rho, &m, &s, seconds, seed).map_err(py_err)?;
    Ok((from_stream(&a), from_stream(&b)))
}

#[pyfunction]
#[pyo3(signature = (alice, bob, search_range_ps = timetag::DEFAULT_SEARCH_RANGE_PS, bin_ps = timetag::DEFAULT_BIN_PS))]
fn find_delay(alice: Vec<(u8, u64)>, bob: Vec<(u8, u64)>, search_range_ps: u64, bin_ps: u64) -> PyResult<i64> {
    let (a, b) = (to_stream(Party::Alice, alice)?, to_stream(Party::Bob, bob)?);
    timetag::find_delay(&a, &b, search_range_ps, bin_ps).map_err(py_err)
}

/// 4×4 table C[Ai][Bj] of matched pairs.
#[pyfunction]
#[pyo3(signature = (alice, bob, delay_ps = 0, window_ps = timetag::DEFAULT_WINDOW_PS))]
fn count_coincidences(alice: Vec<(u8, u64)>, bob: Vec<(u8, u64)>, delay_ps: i64, window_ps: u64) -> PyResult<[[u64; 4]; 4]> {
    let (a, b) = (to_stream(Party::Alice, alice)?, to_stream(Party::Bob, bob)?);
    Ok(timetag::count_coincidences(&a, &b, delay_ps, window_ps).counts)
}

#[pyfunction]
fn keyrate(counts: [[u64; 4]; 4], seconds: f64) -> f64 {
    protocol::keyrate(&CoincidenceTable::from_counts(counts, seconds))
}

#[pyfunction]
fn qber(counts: [[u64; 4]; 4]) -> PyResult<f64> {
    protocol::qber(&CoincidenceTable::from_counts(counts, 1.0)).map_err(py_err)
}

fn session_dict<'py>(py: Python<'py>, r: &SessionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("label", &r.label)?;
    d.set_item("hour", r.hour)?;
    d.set_item("scenario", &r.scenario)?;
    d.set_item("daytime", r.daytime)?;
    d.set_item("tomographic_fidelity", r.tomographic.fidelity_psi_plus)?;
    d.set_item("tomographic_concurrence", r.tomographic.concurrence)?;
    d.set_item("tomographic_state", PyDensityMatrix(r.tomographic_state.clone()))?;
    if let Some(b) = &r.bases {
        d.set_item("bases", bases_dict(py, b)?)?;
    }
    let modes = PyDict::new(py);
    for m in &r.modes {
        let md = PyDict::new(py);
        md.set_item("keyrate_mean_hz", m.keyrate.mean)?;
        md.set_item("keyrate_std_hz", m.keyrate.std)?;
        md.set_item("qber_mean_pct", m.qber.mean)?;
        md.set_item("qber_std_pct", m.qber.std)?;
        md.set_item("secure_fraction", m.secure_fraction)?;
        md.set_item("rows", m.rows.iter().map(|x| x.csv_row()).collect::<Vec<_>>())?;
        if let Some(v) = m.visibility {
            md.set_item("visibility_pct", (v.hv, v.da))?;
        }
        modes.set_item(m.mode.as_str(), md)?;
    }
    d.set_item("modes", modes)?;
    Ok(d)
}

fn config(text: &str) -> PyResult<RunConfig> {
    RunConfig::parse(text).map_err(py_err)
}

/// One session from configuration text; writes reports when `output_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_text = "", output_dir = None))]
fn run_pipeline<'py>(py: Python<'py>, config_text: &str, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(config_text)?;
    let r = py.detach(|| harness::run_pipeline(&cfg)).map_err(py_err)?;
    if let Some(dir) = output_dir {
        harness::emit_reports(std::slice::from_ref(&r), &dir).map_err(py_err)?;
    }
    session_dict(py, &r)
}

/// One session per schedule slot over 24 h.
#[pyfunction]
#[pyo3(signature = (config_text = "", output_dir = None))]
fn daily_cycle<'py>(py: Python<'py>, config_text: &str, output_dir: Option<PathBuf>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config(config_text)?;
    let reports = py.detach(|| harness::daily_cycle(&cfg)).map_err(py_err)?;
    if let Some(dir) = output_dir {
        harness::emit_reports(&reports, &dir).map_err(py_err)?;
    }
    reports.iter().map(|r| session_dict(py, r)).collect()
}

#[pyfunction]
fn default_config() -> String {
    harness::default_config_text()
}

#[pymodule]
fn qkdsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensityMatrix>()?;
    m.add("PRESETS", channel::PRESET_NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(build_source_state, m)?)?;
    m.add_function(wrap_pyfunction!(scramble, m)?)?;
    m.add_function(wrap_pyfunction!(solve_waveplate_angles, m)?)?;
    m.add_function(wrap_pyfunction!(pbs_projectors, m)?)?;
    m.add_function(wrap_pyfunction!(derive_corrected_bases, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_qber, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_tomography, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(generate_streams, m)?)?;
    m.add_function(wrap_pyfunction!(find_delay, m)?)?;
    m.add_function(wrap_pyfunction!(count_coincidences, m)?)?;
    m.add_function(wrap_pyfunction!(keyrate, m)?)?;
    m.add_function(wrap_pyfunction!(qber, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(daily_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
