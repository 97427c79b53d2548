//! BBM92 sifting, keyrate and QBER from coincidence tables.

use crate::correction::{BasisMode, ERROR_PAIRS, SIGNAL_PAIRS};
use crate::error::{Error, Result};
use crate::timetag::{for_each_match, CoincidenceTable, TimestampStream};

pub const DEFAULT_QBER_LIMIT: f64 = 11.0;

pub const CSV_HEADER: &str = "timestamp_label,basis_mode,keyrate_hz,qber_pct,total,errors,secure";

fn sum(table: &CoincidenceTable, pairs: &[(usize, usize)]) -> u64 {
    pairs.iter().map(|&(i, j)| table.counts[i][j]).sum()
}

/// Same-basis coincidences: signal plus error pairs.
pub fn sifted_total(table: &CoincidenceTable) -> u64 {
    sum(table, &SIGNAL_PAIRS) + sum(table, &ERROR_PAIRS)
}

pub fn error_total(table: &CoincidenceTable) -> u64 {
    sum(table, &ERROR_PAIRS)
}

/// Sifted coincidences per second.
pub fn keyrate(table: &CoincidenceTable) -> f64 {
    if table.acquisition_seconds > 0.0 {
        sifted_total(table) as f64 / table.acquisition_seconds
    } else {
        0.0
    }
}

/// Error percentage among sifted coincidences.
pub fn qber(table: &CoincidenceTable) -> Result<f64> {
    let total = sifted_total(table);
    if total == 0 {
        return Err(Error::UndefinedQber);
    }
    Ok(100.0 * error_total(table) as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub timestamp_label: String,
    pub basis_mode: BasisMode,
    pub keyrate_hz: f64,
    /// `None` when no sifted coincidences were recorded.
    pub qber_pct: Option<f64>,
    pub total: u64,
    pub errors: u64,
    pub secure: bool,
}

impl ProtocolResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{},{},{},{}",
            self.timestamp_label,
            self.basis_mode,
            self.keyrate_hz,
            self.qber_pct.map_or_else(|| "nan".to_string(), |q| format!("{q:.4}")),
            self.total,
            self.errors,
            self.secure
        )
    }
}

pub fn evaluate(
    table: &CoincidenceTable,
    basis_mode: BasisMode,
    timestamp_label: &str,
    qber_limit: f64,
) -> ProtocolResult {
    let q = qber(table).ok();
    ProtocolResult {
        timestamp_label: timestamp_label.to_string(),
        basis_mode,
        keyrate_hz: keyrate(table),
        qber_pct: q,
        total: sifted_total(table),
        errors: error_total(table),
        secure: q.is_some_and(|q| q < qber_limit),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn mismatches(&self) -> usize {
        self.alice.iter().zip(&self.bob).filter(|(a, b)| a != b).count()
    }
}

/// Raw key bits from same-basis matches: A1/A3 and B1/B3 read as 0, A2/A4 and
/// B2/B4 as 1. With the Ψ+ assignment of Bob's arms the two bit strings agree.
pub fn sift_bits(a: &TimestampStream, b: &TimestampStream, delay_ps: i64, window_ps: u64) -> SiftedKey {
    let mut key = SiftedKey::default();
    for_each_match(a, b, delay_ps, window_ps, |x, y| {
        let (i, j) = (x.detector - 1, y.detector - 1);
        if i / 2 == j / 2 {
            key.alice.push(i % 2);
            key.bob.push(j % 2);
        }
    });
    key
}
