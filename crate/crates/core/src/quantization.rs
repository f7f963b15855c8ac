//! Subtractively dithered uniform quantization and bit accounting.
//!
//! Transmitter and receiver share a pseudo-random dither stream keyed by
//! `(seed, link, iteration)`. The transmitter sends `Δ·round((x + d)/Δ)`,
//! the receiver subtracts `d`, and the residual error is uniform on
//! `[−Δ/2, Δ/2]` and independent of `x`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graphs::fmt_f64;
use crate::linalg;

/// Variance of the quantization noise for stepsize `delta`.
pub fn noise_variance(delta: f64) -> f64 {
    delta * delta / 12.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Fixed {
        delta: f64,
    },
    /// `Δₜ = rateᵗ · delta0`
    Geometric {
        delta0: f64,
        rate: f64,
    },
    /// Explicit list; iterations past the end reuse the last entry.
    Explicit {
        deltas: Vec<f64>,
    },
}

/// Quantization stepsize as a function of the iteration index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub kind: ScheduleKind,
    /// Per-message bit cap χ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bits: Option<u32>,
}

impl StepsizeSchedule {
    pub fn fixed(delta: f64) -> Result<Self> {
        Self::new(ScheduleKind::Fixed { delta })
    }

    pub fn geometric(delta0: f64, rate: f64) -> Result<Self> {
        Self::new(ScheduleKind::Geometric { delta0, rate })
    }

    pub fn explicit(deltas: Vec<f64>) -> Result<Self> {
        Self::new(ScheduleKind::Explicit { deltas })
    }

    pub fn new(kind: ScheduleKind) -> Result<Self> {
        let s = Self {
            kind,
            max_bits: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_max_bits(mut self, chi: u32) -> Result<Self> {
        if chi == 0 {
            return Err(Error::InvalidArgument("bit cap must be positive".into()));
        }
        self.max_bits = Some(chi);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match &self.kind {
            ScheduleKind::Fixed { delta } => ok(*delta),
            ScheduleKind::Geometric { delta0, rate } => ok(*delta0) && ok(*rate),
            ScheduleKind::Explicit { deltas } => {
                !deltas.is_empty() && deltas.iter().all(|d| ok(*d))
            }
        };
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "stepsizes and rates must be finite and positive: {:?}",
                self.kind
            )));
        }
        if self.max_bits == Some(0) {
            return Err(Error::InvalidArgument("bit cap must be positive".into()));
        }
        Ok(())
    }

    /// Nominal stepsize `Δₜ` before any bit cap.
    pub fn stepsize_at(&self, t: usize) -> f64 {
        match &self.kind {
            ScheduleKind::Fixed { delta } => *delta,
            ScheduleKind::Geometric { delta0, rate } => {
                // exp/ln keeps the value representable long after powi would underflow early
                delta0 * (t as f64 * rate.ln()).exp()
            }
            ScheduleKind::Explicit { deltas } => deltas[t.min(deltas.len() - 1)],
        }
    }

    /// Bits needed to cover `range` at iteration `t`, after the cap.
    pub fn bits_at(&self, t: usize, range: f64) -> u32 {
        self.effective(t, range).bits
    }

    /// Stepsize and bits actually used at iteration `t` for the given range.
    pub fn effective(&self, t: usize, range: f64) -> EffectiveStep {
        let nominal = self.stepsize_at(t);
        let raw = raw_bits(range, nominal);
        match self.max_bits {
            Some(chi) if raw > chi => EffectiveStep {
                delta: range / 2f64.powi(chi as i32),
                bits: chi,
                capped: true,
            },
            _ => EffectiveStep {
                delta: nominal,
                bits: raw,
                capped: false,
            },
        }
    }
}

/// Free-function form of [`StepsizeSchedule::stepsize_at`].
pub fn stepsize_at(s: &StepsizeSchedule, t: usize) -> f64 {
    s.stepsize_at(t)
}

/// Free-function form of [`StepsizeSchedule::bits_at`].
pub fn bits_at(s: &StepsizeSchedule, t: usize, range: f64) -> u32 {
    s.bits_at(t, range)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveStep {
    pub delta: f64,
    pub bits: u32,
    pub capped: bool,
}

fn raw_bits(range: f64, delta: f64) -> u32 {
    if !(range > 0.0) {
        return 0;
    }
    // Tolerate rounding in exact powers of two, e.g. 1.6 / 0.1.
    let b = ((range / delta).log2() - 1e-9).ceil();
    if b <= 0.0 {
        0
    } else {
        b.min(u32::MAX as f64) as u32
    }
}

/// Initial stepsize for a geometric schedule that spends exactly `total_bits`
/// over `t_max + 1` iterations when every message stays within `2‖x‖₂`.
pub fn budgeted_initial_stepsize(
    total_bits: f64,
    t_max: usize,
    x_norm: f64,
    rate: f64,
) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rate {rate} must lie in (0, 1)"
        )));
    }
    if !(total_bits > 0.0) || !(x_norm > 0.0) {
        return Err(Error::InvalidArgument(
            "bit budget and signal norm must be positive".into(),
        ));
    }
    let tm = t_max as f64;
    Ok(2f64.powf(1.0 - total_bits / (1.0 + tm)) * x_norm * rate.powf(-tm / 2.0))
}

/// Quantizer dynamic range `rₜ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RangePolicy {
    Fixed {
        range: f64,
    },
    PerIteration {
        ranges: Vec<f64>,
    },
    /// `rₜ = initial · growthᵗ`
    Geometric {
        initial: f64,
        growth: f64,
    },
    /// `rₜ = factor · growthᵗ · ‖x‖₂` for the filter input `x`; resolved by [`DitheredQuantizer::for_input`].
    InputNorm {
        factor: f64,
        growth: f64,
    },
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy::InputNorm {
            factor: 2.0,
            growth: 1.0,
        }
    }
}

impl RangePolicy {
    pub fn range_at(&self, t: usize) -> Result<f64> {
        match self {
            RangePolicy::Fixed { range } => Ok(*range),
            RangePolicy::PerIteration { ranges } => ranges.get(t).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("no quantization range given for iteration {t}"))
            }),
            RangePolicy::Geometric { initial, growth } => Ok(initial * growth.powi(t as i32)),
            RangePolicy::InputNorm { .. } => Err(Error::InvalidArgument(
                "input-norm range policy must be resolved against the filter input first".into(),
            )),
        }
    }
}

/// Seeded dithered quantizer shared by transmitter and receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitheredQuantizer {
    pub schedule: StepsizeSchedule,
    #[serde(default)]
    pub range: RangePolicy,
    pub seed: u64,
}

impl DitheredQuantizer {
    pub fn new(schedule: StepsizeSchedule, seed: u64) -> Self {
        Self {
            schedule,
            range: RangePolicy::default(),
            seed,
        }
    }

    pub fn with_range(mut self, range: RangePolicy) -> Self {
        self.range = range;
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Replaces an input-norm range policy by the concrete ranges for input `x`.
    pub fn for_input(&self, x: &[f64]) -> Self {
        match self.range {
            RangePolicy::InputNorm { factor, growth } => Self {
                range: RangePolicy::Geometric {
                    initial: factor * linalg::norm2(x),
                    growth,
                },
                ..self.clone()
            },
            _ => self.clone(),
        }
    }

    /// Dither stream of one `(link, iteration)` pair.
    pub fn dither_stream(&self, link_id: u32, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((link_id as u64) << 32) | (t as u64 & 0xffff_ffff));
        rng
    }

    /// Dither vector for one `(link, iteration)` pair and stepsize.
    pub fn dither(&self, link_id: u32, t: usize, delta: f64, len: usize) -> Vec<f64> {
        let mut rng = self.dither_stream(link_id, t);
        (0..len)
            .map(|_| (rng.random::<f64>() - 0.5) * delta)
            .collect()
    }
}

/// Result of one quantized transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub transmitted: Vec<f64>,
    pub received: Vec<f64>,
    pub noise: Vec<f64>,
    pub delta: f64,
    pub bits: u32,
    pub saturations: u64,
}

/// Quantizes `x` with an explicit dither vector. `range` is the full width
/// of the quantizer; values with `|x + d| > range/2` are clamped and counted.
pub fn quantize_with_dither(
    x: &[f64],
    dither: &[f64],
    delta: f64,
    range: Option<f64>,
) -> Result<Quantized> {
    check_len(x.len(), dither.len())?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stepsize {delta} must be positive"
        )));
    }
    let mut saturations = 0;
    let mut transmitted = Vec::with_capacity(x.len());
    let mut received = Vec::with_capacity(x.len());
    let mut noise = Vec::with_capacity(x.len());
    for (&xi, &di) in x.iter().zip(dither) {
        let mut v = xi + di;
        if let Some(r) = range {
            let half = r / 2.0;
            if v.abs() > half {
                saturations += 1;
                v = v.clamp(-half, half);
            }
        }
        let tx = delta * (v / delta).round();
        let rx = tx - di;
        transmitted.push(tx);
        received.push(rx);
        noise.push(rx - xi);
    }
    Ok(Quantized {
        transmitted,
        received,
        noise,
        delta,
        bits: range.map_or(0, |r| raw_bits(r, delta)),
        saturations,
    })
}

/// Quantizes one message vector sent at iteration `t` over `link_id`.
pub fn quantize(x: &[f64], t: usize, q: &DitheredQuantizer, link_id: u32) -> Result<Quantized> {
    let range = q.range.range_at(t)?;
    let step = q.schedule.effective(t, range);
    let d = q.dither(link_id, t, step.delta, x.len());
    let mut out = quantize_with_dither(x, &d, step.delta, Some(range))?;
    out.bits = step.bits;
    if out.saturations > 0 {
        log::debug!(
            "{} saturated entries at iteration {t}, link {link_id}",
            out.saturations
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub delta: f64,
    pub bits: u32,
    pub messages: u64,
    pub saturations: u64,
    pub capped: bool,
}

/// Per-iteration bit usage and overload events of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantizationLedger {
    pub entries: Vec<LedgerEntry>,
    pub saturation_events: u64,
    pub total_bits: u64,
}

impl QuantizationLedger {
    /// Records one transmission of `messages` scalars.
    pub fn record(&mut self, t: usize, q: &Quantized, messages: u64, capped: bool) {
        self.saturation_events += q.saturations;
        self.total_bits += q.bits as u64 * messages;
        if let Some(last) = self.entries.last_mut() {
            if last.iteration == t && last.delta == q.delta && last.bits == q.bits {
                last.messages += messages;
                last.saturations += q.saturations;
                return;
            }
        }
        self.entries.push(LedgerEntry {
            iteration: t,
            delta: q.delta,
            bits: q.bits,
            messages,
            saturations: q.saturations,
            capped,
        });
    }

    pub fn bits_per_iteration(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.bits).collect()
    }

    /// Writes `iteration,delta,bits,saturations` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "delta", "bits", "saturations"])?;
        for e in &self.entries {
            wr.write_record([
                e.iteration.to_string(),
                fmt_f64(e.delta),
                e.bits.to_string(),
                e.saturations.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Quantizes and records into `ledger` in one step.
pub(crate) fn quantize_logged(
    x: &[f64],
    t: usize,
    q: &DitheredQuantizer,
    link_id: u32,
    ledger: &mut QuantizationLedger,
) -> Result<Quantized> {
    let out = quantize(x, t, q, link_id)?;
    let capped = q.schedule.effective(t, q.range.range_at(t)?).capped;
    ledger.record(t, &out, x.len() as u64, capped);
    Ok(out)
}
