//! Activation traces: per-token, per-layer FFN input vectors `V_x` and,
//! optionally, FFN intermediate vectors `V_d`.
//!
//! Two file encodings are supported; `docs/trace-format.md` is the byte-level
//! reference.
//!
//! Text, one record per line:
//!
//! ```text
//! # edgesim-trace v1
//! meta model=<name> layers=<L> d_model=<D> d_ffn=<F> tokens=<T>
//! rec <token> <layer> vx <D floats>
//! rec <token> <layer> vd <F floats>
//! ```
//!
//! Binary: a 32-byte header of eight little-endian `u32` words (magic
//! `ESTR`, version, layers, d_model, d_ffn, tokens, flags, reserved)
//! followed by little-endian `f32` data, token-major then layer-major, each
//! record `V_x` then `V_d` when flag bit 0 is set.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEXT_MAGIC: &str = "# edgesim-trace v1";
pub const BINARY_MAGIC: [u8; 4] = *b"ESTR";
pub const BINARY_VERSION: u32 = 1;
pub const FLAG_HAS_VD: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub model: String,
    pub layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub tokens: usize,
    /// `tokens * layers * d_model` values.
    pub vx: Vec<f32>,
    /// `tokens * layers * d_ffn` values when present.
    pub vd: Option<Vec<f32>>,
}

impl ActivationTrace {
    pub fn vx(&self, token: usize, layer: usize) -> &[f32] {
        let off = (token * self.layers + layer) * self.d_model;
        &self.vx[off..off + self.d_model]
    }

    pub fn vd(&self, token: usize, layer: usize) -> Option<&[f32]> {
        let off = (token * self.layers + layer) * self.d_ffn;
        self.vd.as_ref().map(|vd| &vd[off..off + self.d_ffn])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.d_ffn == 0 || self.tokens == 0 {
            return Err(Error::TraceFormat("dimensions must be ≥ 1".into()));
        }
        if self.vx.len() != self.tokens * self.layers * self.d_model {
            return Err(Error::TraceFormat("V_x length does not match header".into()));
        }
        if let Some(vd) = &self.vd {
            if vd.len() != self.tokens * self.layers * self.d_ffn {
                return Err(Error::TraceFormat("V_d length does not match header".into()));
            }
        }
        let all = self.vx.iter().chain(self.vd.iter().flatten());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::TraceFormat("non-finite value".into()));
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TEXT_MAGIC}")?;
        writeln!(
            w,
            "meta model={} layers={} d_model={} d_ffn={} tokens={}",
            self.model, self.layers, self.d_model, self.d_ffn, self.tokens
        )?;
        for t in 0..self.tokens {
            for l in 0..self.layers {
                write!(w, "rec {t} {l} vx")?;
                for x in self.vx(t, l) {
                    write!(w, " {x}")?;
                }
                writeln!(w)?;
                if let Some(vd) = self.vd(t, l) {
                    write!(w, "rec {t} {l} vd")?;
                    for x in vd {
                        write!(w, " {x}")?;
                    }
                    writeln!(w)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().transpose()?.unwrap_or_default();
        if first.trim() != TEXT_MAGIC {
            return Err(Error::TraceFormat(format!("expected '{TEXT_MAGIC}'")));
        }
        let mut header: Option<(String, usize, usize, usize, usize)> = None;
        let mut vx: Vec<f32> = Vec::new();
        let mut vd: Vec<f32> = Vec::new();
        let mut seen_vx: Vec<bool> = Vec::new();
        let mut seen_vd: Vec<bool> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::TraceFormat(format!("line {}: {msg}", lineno + 2));
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("meta") => {
                    let mut model = None;
                    let mut dims = [None; 4];
                    for kv in fields {
                        let (k, v) = kv.split_once('=').ok_or_else(|| bad("meta field without '='"))?;
                        let parse = |v: &str| v.parse::<usize>().map_err(|_| bad("bad meta number"));
                        match k {
                            "model" => model = Some(v.to_string()),
                            "layers" => dims[0] = Some(parse(v)?),
                            "d_model" => dims[1] = Some(parse(v)?),
                            "d_ffn" => dims[2] = Some(parse(v)?),
                            "tokens" => dims[3] = Some(parse(v)?),
                            _ => return Err(bad("unknown meta field")),
                        }
                    }
                    let [Some(l), Some(d), Some(f), Some(t)] = dims else {
                        return Err(bad("meta needs layers, d_model, d_ffn and tokens"));
                    };
                    let n = t.checked_mul(l).ok_or_else(|| bad("trace too large"))?;
                    vx = vec![0.0; n.checked_mul(d).ok_or_else(|| bad("trace too large"))?];
                    seen_vx = vec![false; n];
                    seen_vd = vec![false; n];
                    header = Some((model.unwrap_or_default(), l, d, f, t));
                }
                Some("rec") => {
                    let (_, layers, d, f, tokens) = header.as_ref().ok_or_else(|| bad("record before meta"))?;
                    let mut idx = || -> Result<usize> {
                        fields
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad("bad record index"))
                    };
                    let (t, l) = (idx()?, idx()?);
                    if t >= *tokens || l >= *layers {
                        return Err(bad("record index out of range"));
                    }
                    let name = fields.next().ok_or_else(|| bad("missing vector name"))?;
                    let values: Vec<f32> = fields
                        .map(|s| s.parse::<f32>().map_err(|_| bad("bad float")))
                        .collect::<Result<_>>()?;
                    let slot = t * layers + l;
                    match name {
                        "vx" => {
                            if values.len() != *d {
                                return Err(bad("V_x length differs from d_model"));
                            }
                            if std::mem::replace(&mut seen_vx[slot], true) {
                                return Err(bad("duplicate record"));
                            }
                            vx[slot * d..(slot + 1) * d].copy_from_slice(&values);
                        }
                        "vd" => {
                            if values.len() != *f {
                                return Err(bad("V_d length differs from d_ffn"));
                            }
                            if vd.is_empty() {
                                vd = vec![0.0; tokens * layers * f];
                            }
                            if std::mem::replace(&mut seen_vd[slot], true) {
                                return Err(bad("duplicate record"));
                            }
                            vd[slot * f..(slot + 1) * f].copy_from_slice(&values);
                        }
                        _ => return Err(bad("vector name must be vx or vd")),
                    }
                }
                _ => return Err(bad("expected 'meta' or 'rec'")),
            }
        }
        let (model, layers, d_model, d_ffn, tokens) =
            header.ok_or_else(|| Error::TraceFormat("missing meta line".into()))?;
        if seen_vx.iter().any(|s| !s) {
            return Err(Error::TraceFormat("missing V_x records".into()));
        }
        let has_vd = seen_vd.iter().any(|&s| s);
        if has_vd && seen_vd.iter().any(|s| !s) {
            return Err(Error::TraceFormat("V_d present for some records only".into()));
        }
        let trace = Self {
            model,
            layers,
            d_model,
            d_ffn,
            tokens,
            vx,
            vd: has_vd.then_some(vd),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = |v: usize| u32::try_from(v).map_err(|_| Error::TraceFormat("dimension exceeds u32".into()));
        let flags = if self.vd.is_some() { FLAG_HAS_VD } else { 0 };
        w.write_all(&BINARY_MAGIC)?;
        for word in [
            BINARY_VERSION,
            dim(self.layers)?,
            dim(self.d_model)?,
            dim(self.d_ffn)?,
            dim(self.tokens)?,
            flags,
            0,
        ] {
            w.write_all(&word.to_le_bytes())?;
        }
        for t in 0..self.tokens {
            for l in 0..self.layers {
                for x in self.vx(t, l) {
                    w.write_all(&x.to_le_bytes())?;
                }
                if let Some(vd) = self.vd(t, l) {
                    for x in vd {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)
            .map_err(|_| Error::TraceFormat("truncated header".into()))?;
        if header[..4] != BINARY_MAGIC {
            return Err(Error::TraceFormat("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != BINARY_VERSION {
            return Err(Error::TraceFormat(format!("unsupported version {}", word(1))));
        }
        let (layers, d_model, d_ffn, tokens) = (word(2) as usize, word(3) as usize, word(4) as usize, word(5) as usize);
        let has_vd = word(6) & FLAG_HAS_VD != 0;
        let records = tokens * layers;
        let mut vx = Vec::with_capacity(records * d_model);
        let mut vd = Vec::with_capacity(if has_vd { records * d_ffn } else { 0 });
        let mut buf = [0u8; 4];
        let mut next = |r: &mut R| -> Result<f32> {
            r.read_exact(&mut buf)
                .map_err(|_| Error::TraceFormat("truncated data".into()))?;
            Ok(f32::from_le_bytes(buf))
        };
        for _ in 0..records {
            for _ in 0..d_model {
                vx.push(next(&mut r)?);
            }
            if has_vd {
                for _ in 0..d_ffn {
                    vd.push(next(&mut r)?);
                }
            }
        }
        let trace = Self {
            model: String::from("binary"),
            layers,
            d_model,
            d_ffn,
            tokens,
            vx,
            vd: has_vd.then_some(vd),
        };
        trace.validate()?;
        Ok(trace)
    }

    /// Reads either encoding, chosen by the leading bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(&BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_text(bytes.as_slice())
        }
    }
}

/// Knobs of the synthetic activation generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Outlier channels at the start of the schedule, as a fraction of width.
    pub outlier_fraction: f64,
    /// Outlier amplitude in units of the Gaussian base's standard deviation.
    pub amplitude: f64,
    /// Outlier channels left at the top of the schedule.
    pub min_outliers: usize,
    pub gain_min: f64,
    pub gain_max: f64,
    /// Relative per-token amplitude noise of each outlier.
    pub jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            outlier_fraction: 1.0 / 16.0,
            amplitude: 150.0,
            min_outliers: 2,
            gain_min: 0.6,
            gain_max: 1.0,
            jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Outlier {
    channel: usize,
    sign: f64,
    gain: f64,
}

/// Fixed outlier channels of one vector space, spread by a golden-ratio
/// sequence so every contiguous core slice receives some.
#[derive(Debug, Clone)]
struct OutlierSet {
    width: usize,
    base_count: usize,
    min_count: usize,
    outliers: Vec<Outlier>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

impl OutlierSet {
    fn new(width: usize, params: &SynthParams, rng: &mut ChaCha8Rng) -> Self {
        let base_count = ((params.outlier_fraction * width as f64).round() as usize).clamp(1, width);
        let min_count = params.min_outliers.clamp(1, base_count);
        let mut seen = vec![false; width];
        let mut outliers = Vec::with_capacity(base_count);
        let mut j = 1u64;
        while outliers.len() < base_count {
            let channel = (((j as f64 * GOLDEN) % 1.0) * width as f64) as usize;
            j += 1;
            if !std::mem::replace(&mut seen[channel.min(width - 1)], true) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let gain = rng.random_range(params.gain_min..=params.gain_max);
                outliers.push(Outlier {
                    channel: channel.min(width - 1),
                    sign,
                    gain,
                });
            }
        }
        Self {
            width,
            base_count,
            min_count,
            outliers,
        }
    }

    /// Outlier amplitudes at severity `theta` in [0, 1]. The first half grows
    /// the amplitude of all base outliers; the second half removes outliers
    /// one by one (continuously, by fading the last one) down to `min_count`.
    fn amplitudes(&self, theta: f64, amplitude: f64) -> Vec<f64> {
        let theta = theta.clamp(0.0, 1.0);
        if theta <= 0.5 {
            let a = amplitude * (theta / 0.5).powi(2);
            return vec![a; self.base_count];
        }
        let count = self.base_count as f64 - (self.base_count - self.min_count) as f64 * (theta - 0.5) / 0.5;
        let whole = count.floor() as usize;
        let frac = count - whole as f64;
        (0..self.base_count)
            .map(|i| match i.cmp(&whole) {
                std::cmp::Ordering::Less => amplitude,
                std::cmp::Ordering::Equal => amplitude * frac,
                std::cmp::Ordering::Greater => 0.0,
            })
            .collect()
    }

    /// Population kurtosis of the channel mixture at severity `theta`.
    fn expected_kurtosis(&self, theta: f64, params: &SynthParams) -> f64 {
        let amps = self.amplitudes(theta, params.amplitude);
        let n = self.width as f64;
        let (mut e1, mut e2, mut e3, mut e4) = (0.0, 0.0, 0.0, 0.0);
        let base = (self.width - self.outliers.len()) as f64;
        e2 += base;
        e4 += 3.0 * base;
        for (o, a) in self.outliers.iter().zip(&amps) {
            let mu = o.sign * o.gain * a;
            let var = 1.0 + (params.jitter * o.gain * a).powi(2);
            e1 += mu;
            e2 += mu * mu + var;
            e3 += mu.powi(3) + 3.0 * mu * var;
            e4 += mu.powi(4) + 6.0 * mu * mu * var + 3.0 * var * var;
        }
        let (e1, e2, e3, e4) = (e1 / n, e2 / n, e3 / n, e4 / n);
        let m2 = e2 - e1 * e1;
        let m4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
        m4 / (m2 * m2)
    }

    /// Severity whose expected kurtosis equals `target`, clamped to the
    /// reachable range.
    fn solve(&self, target: f64, params: &SynthParams) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.expected_kurtosis(mid, params) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn sample(&self, amps: &[f64], params: &SynthParams, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
        let start = out.len();
        out.extend((0..self.width).map(|_| rng.sample::<f64, _>(StandardNormal) as f32));
        for (o, a) in self.outliers.iter().zip(amps) {
            let noise: f64 = rng.sample(StandardNormal);
            out[start + o.channel] += (o.sign * o.gain * a * (1.0 + params.jitter * noise)) as f32;
        }
    }
}

/// Reachable kurtosis range of the generator for a width.
pub fn kurtosis_range(width: usize, params: &SynthParams, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = OutlierSet::new(width, params, &mut rng);
    (set.expected_kurtosis(0.0, params), set.expected_kurtosis(1.0, params))
}

/// Seeded trace whose layer `i` has expected channel kurtosis
/// `kurtosis_schedule[i]`.
pub fn synth_trace(
    layers: usize,
    d_model: usize,
    d_ffn: usize,
    tokens: usize,
    kurtosis_schedule: &[f64],
    seed: u64,
) -> Result<ActivationTrace> {
    synth_trace_with(
        layers,
        d_model,
        d_ffn,
        tokens,
        kurtosis_schedule,
        seed,
        &SynthParams::default(),
    )
}

pub fn synth_trace_with(
    layers: usize,
    d_model: usize,
    d_ffn: usize,
    tokens: usize,
    kurtosis_schedule: &[f64],
    seed: u64,
    params: &SynthParams,
) -> Result<ActivationTrace> {
    if layers == 0 || d_model < 2 || d_ffn < 2 || tokens == 0 {
        return Err(Error::InvalidDimension(
            "synthetic trace needs layers, tokens ≥ 1 and widths ≥ 2".into(),
        ));
    }
    if kurtosis_schedule.len() != layers {
        return Err(Error::InvalidConfig(format!(
            "kurtosis schedule has {} entries for {layers} layers",
            kurtosis_schedule.len()
        )));
    }
    if kurtosis_schedule.iter().any(|k| !k.is_finite()) {
        return Err(Error::InvalidConfig("kurtosis schedule must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_set = OutlierSet::new(d_model, params, &mut rng);
    let d_set = OutlierSet::new(d_ffn, params, &mut rng);
    let x_amps: Vec<Vec<f64>> = kurtosis_schedule
        .iter()
        .map(|&k| x_set.amplitudes(x_set.solve(k, params), params.amplitude))
        .collect();
    let d_amps: Vec<Vec<f64>> = kurtosis_schedule
        .iter()
        .map(|&k| d_set.amplitudes(d_set.solve(k, params), params.amplitude))
        .collect();
    let mut vx = Vec::with_capacity(tokens * layers * d_model);
    let mut vd = Vec::with_capacity(tokens * layers * d_ffn);
    for _ in 0..tokens {
        for l in 0..layers {
            x_set.sample(&x_amps[l], params, &mut rng, &mut vx);
            d_set.sample(&d_amps[l], params, &mut rng, &mut vd);
        }
    }
    Ok(ActivationTrace {
        model: "synthetic".into(),
        layers,
        d_model,
        d_ffn,
        tokens,
        vx,
        vd: Some(vd),
    })
}

/// Recipe for a reproducible synthetic trace, stored as a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecipe {
    pub layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub tokens: usize,
    pub seed: u64,
    /// Cores the channels are split over during pruning.
    pub cores: usize,
    pub kurtosis_schedule: Vec<f64>,
    #[serde(default)]
    pub synth: Option<SynthParams>,
}

impl TraceRecipe {
    /// The recipe shipped as `configs/traces/synthetic.toml`: a slow rise over
    /// the first six layers followed by a steep one.
    pub fn shipped() -> Self {
        let mut schedule: Vec<f64> = (0..6).map(|i| 3.0 + 0.5 * i as f64).collect();
        schedule.extend((0..16).map(|i| 20.0 + 40.0 * i as f64 / 15.0));
        Self {
            layers: 22,
            d_model: 256,
            d_ffn: 704,
            tokens: 16,
            seed: 1,
            cores: 2,
            kurtosis_schedule: schedule,
            synth: None,
        }
    }

    pub fn generate(&self) -> Result<ActivationTrace> {
        let params = self.synth.unwrap_or_default();
        synth_trace_with(
            self.layers,
            self.d_model,
            self.d_ffn,
            self.tokens,
            &self.kurtosis_schedule,
            self.seed,
            &params,
        )
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
