//! Tabulated periodic inflow waveform `q(t) = f * qbar(t mod T)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MIN_SCALE: f64 = 2.0 / 3.0;
pub const MAX_SCALE: f64 = 4.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBc {
    times: Vec<f64>,
    rates: Vec<f64>,
    scale: f64,
}

impl WaveformBc {
    /// Builds a waveform from `(t, qbar)` samples covering one period `[0, T]`.
    pub fn new(samples: Vec<(f64, f64)>, scale: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("waveform table needs at least two samples"));
        }
        if !(MIN_SCALE - 1e-12..=MAX_SCALE + 1e-12).contains(&scale) {
            return Err(Error::invalid(format!(
                "waveform scale factor {scale} outside [2/3, 4/3]"
            )));
        }
        let (times, rates): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        if times[0] != 0.0 {
            return Err(Error::invalid("waveform table must start at t = 0"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("waveform times must be strictly increasing"));
        }
        if times.iter().chain(&rates).any(|v| !v.is_finite()) {
            return Err(Error::invalid("waveform table contains non-finite values"));
        }
        let first = rates[0];
        let last = *rates.last().unwrap();
        let span = rates.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(f64::MIN_POSITIVE);
        if (first - last).abs() > 1e-12 * span {
            return Err(Error::invalid(format!(
                "waveform is not periodic: q(0) = {first}, q(T) = {last}"
            )));
        }
        Ok(Self { times, rates, scale })
    }

    /// Loads a two-column `t,q` CSV with a header line.
    pub fn from_csv(path: impl AsRef<Path>, scale: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(path, "empty waveform file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "q"] {
            return Err(Error::format(path, "waveform header must be `t,q`"));
        }
        let mut samples = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::format(path, format!("bad row {}", k + 2)))
            };
            let t = parse(it.next())?;
            let q = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::format(path, format!("extra column in row {}", k + 2)));
            }
            samples.push((t, q));
        }
        Self::new(samples, scale)
    }

    /// Synthetic coronary-style pulse: a low flat phase followed by a
    /// higher smooth peak in the second half of the cycle. `q_ref` sets the
    /// plateau-to-peak scale (m²/s per unit depth).
    ///
    /// The table is fine enough that the kinks of the linear interpolant
    /// stay well below typical time steps; coarse tables put a visible
    /// staircase into `dq/dt` and hence into the pressure.
    pub fn default_pulse(period: f64, q_ref: f64, scale: f64) -> Result<Self> {
        const N: usize = 1600;
        let shape = |s: f64| {
            let w = 0.15;
            let bump: f64 = (-1..=1)
                .map(|k| {
                    let z = (s + k as f64 - 0.55) / w;
                    (-z * z).exp()
                })
                .sum();
            0.6 + 0.8 * bump
        };
        let mut samples: Vec<(f64, f64)> = (0..=N)
            .map(|k| {
                let s = k as f64 / N as f64;
                (s * period, q_ref * shape(s))
            })
            .collect();
        samples[N].1 = samples[0].1;
        Self::new(samples, scale)
    }

    /// Constant waveform, used for steady verification runs.
    pub fn constant(period: f64, q: f64) -> Result<Self> {
        Self::new(vec![(0.0, q), (period, q)], 1.0)
    }

    pub fn period(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.samples(), scale)
    }

    pub fn samples(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.rates.iter().copied()).collect()
    }

    pub fn mean_rate(&self) -> f64 {
        let area: f64 = self
            .times
            .windows(2)
            .zip(self.rates.windows(2))
            .map(|(t, q)| 0.5 * (q[0] + q[1]) * (t[1] - t[0]))
            .sum();
        self.scale * area / self.period()
    }

    pub fn peak_rate(&self) -> f64 {
        self.scale * self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Inflow rate at time `t`, periodic in the table's period.
pub fn inflow_rate(bc: &WaveformBc, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("inflow time must be non-negative, got {t}")));
    }
    let period = bc.period();
    let s = t.rem_euclid(period);
    let k = bc.times.partition_point(|&ti| ti <= s);
    let value = if k == 0 {
        bc.rates[0]
    } else if k >= bc.times.len() {
        *bc.rates.last().unwrap()
    } else {
        let (t0, t1) = (bc.times[k - 1], bc.times[k]);
        let (q0, q1) = (bc.rates[k - 1], bc.rates[k]);
        if s == t0 {
            q0
        } else {
            q0 + (q1 - q0) * (s - t0) / (t1 - t0)
        }
    };
    Ok(bc.scale * value)
}
