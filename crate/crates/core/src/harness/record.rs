//! Per-point results and their CSV form.

use std::io::Write;

use crate::Result;

/// Columns of every result file, in order.
pub const CSV_COLUMNS: [&str; 13] = [
    "waveform",
    "scheme",
    "K_u",
    "N",
    "M",
    "snr_db",
    "pilot_snr_db",
    "frames",
    "bit_errors",
    "ber",
    "nmse",
    "seed",
    "config_hash",
];

/// Outcome of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub waveform: String,
    pub scheme: String,
    pub num_users: usize,
    pub n: usize,
    pub m: usize,
    /// Data SNR; `None` for pure estimation points.
    pub snr_db: Option<f64>,
    /// Pilot SNR; `None` when the receiver knows the channel.
    pub pilot_snr_db: Option<f64>,
    pub frames: u64,
    pub bit_errors: u64,
    pub total_bits: u64,
    pub per_user_bit_errors: Vec<u64>,
    /// `None` for estimation-only points and failed points.
    pub ber: Option<f64>,
    /// Standard error of `ber` from the per-frame error counts.
    pub ber_std_err: Option<f64>,
    pub nmse: Option<f64>,
    /// 95% confidence half-width of `nmse`.
    pub nmse_half_width: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
    /// Set when the point could not be simulated (e.g. ML guard refusal).
    pub failure: Option<String>,
}

impl ResultRecord {
    pub fn per_user_ber(&self) -> Vec<f64> {
        let per_user_bits = self.total_bits / self.per_user_bit_errors.len().max(1) as u64;
        self.per_user_bit_errors
            .iter()
            .map(|&e| if per_user_bits == 0 { 0.0 } else { e as f64 / per_user_bits as f64 })
            .collect()
    }

    fn csv_row(&self) -> [String; 13] {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        [
            self.waveform.clone(),
            self.scheme.clone(),
            self.num_users.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            opt(self.snr_db),
            opt(self.pilot_snr_db),
            self.frames.to_string(),
            self.bit_errors.to_string(),
            opt(self.ber),
            opt(self.nmse),
            self.seed.to_string(),
            self.config_hash.clone(),
        ]
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

/// Writes a header and one row per record. Wall time and failure details
/// are left out so reruns produce identical bytes.
pub fn write_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[ResultRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// SNR (dB) at which a BER curve crosses `target`, by linear interpolation
/// of `log10(BER)` between the first bracketing pair of points. Points
/// with zero BER count as below any positive target.
pub fn snr_at_ber(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve.iter().copied().filter(|(s, b)| s.is_finite() && !b.is_nan()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lt = target.log10();
    for w in pts.windows(2) {
        let ((s0, b0), (s1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 < target {
            if b1 <= 0.0 {
                return Some(s1);
            }
            let (l0, l1) = (b0.log10(), b1.log10());
            return Some(s0 + (l0 - lt) / (l0 - l1) * (s1 - s0));
        }
    }
    None
}
