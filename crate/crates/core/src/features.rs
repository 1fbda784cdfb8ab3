//! Log mel-band energy extraction and per-dimension normalization.
//!
//! The pipeline per frame: Hamming window, power spectrum via an FFT
//! zero-padded to `fft_size`, a triangular mel filterbank (centers equally
//! spaced on the mel scale, peak weight 1, unnormalized), then a natural
//! log with a floor that keeps silence finite.
//!
//! Audio enters as WAV (PCM 16-bit or IEEE float 32-bit; stereo is averaged
//! to mono). Features persist as a little-endian "SEDF" binary block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Error;
use crate::Result;

/// Mono audio at a known sample rate. Samples are finite and within
/// [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                return Err(Error::InvalidParameter(format!(
                    "sample {i} out of range [-1,1]: {s}"
                )));
            }
        }
        Ok(AudioBuffer { sample_rate, samples })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Mel extraction settings. `fft_size` and `f_max` default to values derived
/// from the sample rate at extraction time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelParams {
    pub n_mels: usize,
    /// Analysis window in seconds.
    pub window: f64,
    /// Frame shift in seconds.
    pub hop: f64,
    /// None selects the smallest power of two holding one window.
    pub fft_size: Option<usize>,
    pub f_min: f64,
    /// None selects the Nyquist frequency.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            n_mels: 64,
            window: 0.040,
            hop: 0.020,
            fft_size: None,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

/// MelParams with the sample-rate-dependent choices pinned down.
#[derive(Debug, Clone, Copy)]
struct ResolvedMel {
    n_mels: usize,
    win_samples: usize,
    hop_samples: usize,
    fft_size: usize,
    f_min: f64,
    f_max: f64,
    log_floor: f64,
}

impl MelParams {
    fn resolve(&self, sample_rate: u32) -> Result<ResolvedMel> {
        if self.n_mels == 0 {
            return Err(Error::InvalidParameter("n_mels must be at least 1".into()));
        }
        if !(self.window > 0.0) || !(self.hop > 0.0) {
            return Err(Error::InvalidParameter("window and hop must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidParameter("log floor must be positive".into()));
        }
        let sr = sample_rate as f64;
        let win_samples = (self.window * sr).round() as usize;
        let hop_samples = (self.hop * sr).round() as usize;
        if win_samples == 0 || hop_samples == 0 {
            return Err(Error::InvalidParameter(format!(
                "window/hop too short for sample rate {sample_rate}"
            )));
        }
        let fft_size = match self.fft_size {
            Some(size) => {
                if !size.is_power_of_two() || size < win_samples {
                    return Err(Error::InvalidParameter(format!(
                        "fft_size {size} must be a power of two >= window samples {win_samples}"
                    )));
                }
                size
            }
            None => win_samples.next_power_of_two(),
        };
        let nyquist = sr / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        if !(self.f_min >= 0.0) || !(self.f_min < f_max) || f_max > nyquist + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got f_min {} f_max {f_max}",
                self.f_min
            )));
        }
        Ok(ResolvedMel {
            n_mels: self.n_mels,
            win_samples,
            hop_samples,
            fft_size,
            f_min: self.f_min,
            f_max,
            log_floor: self.log_floor,
        })
    }
}

/// Log mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("feature values must be finite".into()));
        }
        Ok(FeatureMatrix { values })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Per-dimension mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    /// Population standard deviation, floored at 1e-8.
    pub std: Array1<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` filters, equally spaced on the
/// mel scale between `f_min` and `f_max`.
pub fn mel_centers(p: &MelParams, sample_rate: u32) -> Result<Vec<f64>> {
    let r = p.resolve(sample_rate)?;
    let mel_lo = hz_to_mel(r.f_min);
    let mel_hi = hz_to_mel(r.f_max);
    let step = (mel_hi - mel_lo) / (r.n_mels + 1) as f64;
    Ok((1..=r.n_mels).map(|i| mel_to_hz(mel_lo + i as f64 * step)).collect())
}

/// Triangular filterbank, one row per mel band over `fft_size/2 + 1` bins.
/// Errors if the FFT resolution leaves any band without a nonzero weight.
pub fn mel_filterbank(p: &MelParams, sample_rate: u32) -> Result<Array2<f64>> {
    let r = p.resolve(sample_rate)?;
    let n_bins = r.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(r.f_min);
    let mel_hi = hz_to_mel(r.f_max);
    let step = (mel_hi - mel_lo) / (r.n_mels + 1) as f64;
    let edge = |i: usize| mel_to_hz(mel_lo + i as f64 * step);
    let bin_hz = sample_rate as f64 / r.fft_size as f64;

    let mut bank = Array2::zeros((r.n_mels, n_bins));
    for band in 0..r.n_mels {
        let left = edge(band);
        let center = edge(band + 1);
        let right = edge(band + 2);
        let mut any = false;
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                bank[[band, bin]] = w;
                any = true;
            }
        }
        if !any {
            return Err(Error::EmptyMelFilter { index: band, n_mels: r.n_mels });
        }
    }
    Ok(bank)
}

/// Extract log mel-band energies. Frame count is
/// `floor((len - win) / hop) + 1` in samples; shorter audio yields zero
/// frames.
pub fn log_mel(audio: &AudioBuffer, p: &MelParams) -> Result<FeatureMatrix> {
    let r = p.resolve(audio.sample_rate())?;
    let bank = mel_filterbank(p, audio.sample_rate())?;
    let n_bins = r.fft_size / 2 + 1;

    // Sparse view of each band: (first nonzero bin, weights).
    let bands: Vec<(usize, Vec<f64>)> = (0..r.n_mels)
        .map(|band| {
            let row = bank.row(band);
            let lo = row.iter().position(|&w| w != 0.0).expect("validated nonempty");
            let hi = n_bins - row.iter().rev().position(|&w| w != 0.0).unwrap();
            (lo, row.slice(ndarray::s![lo..hi]).to_vec())
        })
        .collect();

    let len = audio.len();
    let n_frames = if len >= r.win_samples {
        (len - r.win_samples) / r.hop_samples + 1
    } else {
        0
    };
    let mut values = Array2::zeros((n_frames, r.n_mels));
    if n_frames == 0 {
        return FeatureMatrix::new(values);
    }

    let hamming: Vec<f64> = if r.win_samples == 1 {
        vec![1.0]
    } else {
        (0..r.win_samples)
            .map(|i| {
                0.54 - 0.46
                    * (2.0 * std::f64::consts::PI * i as f64 / (r.win_samples - 1) as f64).cos()
            })
            .collect()
    };

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(r.fft_size);
    let mut buffer = vec![Complex::new(0.0, 0.0); r.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = vec![0.0f64; n_bins];

    for frame in 0..n_frames {
        let start = frame * r.hop_samples;
        for i in 0..r.fft_size {
            let re = if i < r.win_samples { audio.samples()[start + i] * hamming[i] } else { 0.0 };
            buffer[i] = Complex::new(re, 0.0);
        }
        fft.process_with_scratch(&mut buffer, &mut scratch);
        for (bin, p) in power.iter_mut().enumerate() {
            *p = buffer[bin].norm_sqr();
        }
        for (band, (lo, weights)) in bands.iter().enumerate() {
            let energy: f64 =
                weights.iter().zip(&power[*lo..lo + weights.len()]).map(|(w, p)| w * p).sum();
            values[[frame, band]] = energy.max(r.log_floor).ln();
        }
    }
    FeatureMatrix::new(values)
}

/// Fit per-dimension mean/std over every frame of every matrix.
pub fn fit_norm(features: &[FeatureMatrix]) -> Result<NormStats> {
    let n_dims = match features.iter().find(|f| f.n_frames() > 0) {
        Some(f) => f.n_dims(),
        None => return Err(Error::EmptyNormFit),
    };
    let mut count = 0usize;
    let mut mean = Array1::zeros(n_dims);
    for f in features {
        if f.n_frames() == 0 {
            continue;
        }
        if f.n_dims() != n_dims {
            return Err(Error::shape("fit_norm dims", n_dims.to_string(), f.n_dims().to_string()));
        }
        count += f.n_frames();
        for row in f.values().rows() {
            mean += &row;
        }
    }
    mean /= count as f64;
    let mut var = Array1::zeros(n_dims);
    for f in features {
        for row in f.values().rows() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
    }
    var /= count as f64;
    let std = var.mapv(|v: f64| v.sqrt().max(1e-8));
    Ok(NormStats { mean, std })
}

/// Standardize each dimension with previously fitted statistics.
pub fn apply_norm(f: &FeatureMatrix, s: &NormStats) -> Result<FeatureMatrix> {
    if f.n_dims() != s.mean.len() {
        return Err(Error::shape("apply_norm dims", s.mean.len().to_string(), f.n_dims().to_string()));
    }
    let mut values = f.values().clone();
    for mut row in values.rows_mut() {
        row -= &s.mean;
        row /= &s.std;
    }
    FeatureMatrix::new(values)
}

/// Decode a WAV file. Accepts PCM 16-bit or IEEE float 32-bit; stereo is
/// averaged to mono; float samples are clamped to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (format, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {format:?} {bits}-bit (need PCM16 or float32)",
                path.display()
            )))
        }
    };
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(spec.sample_rate, samples)
}

/// Write mono PCM 16-bit WAV.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in audio.samples() {
        let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

const SEDF_MAGIC: &[u8; 4] = b"SEDF";
const SEDF_VERSION: u32 = 1;

/// Serialize features as `SEDF` v1: magic, u32 version, u32 N, u32 D, then
/// N*D little-endian f64 values row-major.
pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SEDF_MAGIC)?;
    w.write_u32::<LittleEndian>(SEDF_VERSION)?;
    w.write_u32::<LittleEndian>(f.n_frames() as u32)?;
    w.write_u32::<LittleEndian>(f.n_dims() as u32)?;
    for &v in f.values().iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bad = |message: String| Error::BadFile {
        what: "SEDF",
        message: format!("{}: {message}", path.display()),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SEDF_MAGIC {
        return Err(bad(format!("bad magic {magic:?}, expected SEDF")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SEDF_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let total = (n as u64) * (d as u64);
    if total > (1 << 32) {
        return Err(bad(format!("implausible shape {n}x{d}")));
    }
    let mut values = Vec::with_capacity(total as usize);
    for _ in 0..total {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing data after matrix".into()));
    }
    let values = Array2::from_shape_vec((n, d), values)
        .map_err(|e| bad(format!("shape error: {e}")))?;
    FeatureMatrix::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine(sample_rate: u32, hz: f64, seconds: f64, amplitude: f64) -> AudioBuffer {
        let n = (seconds * sample_rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| {
                amplitude * (2.0 * std::f64::consts::PI * hz * i as f64 / sample_rate as f64).sin()
            })
            .collect();
        AudioBuffer::new(sample_rate, samples).unwrap()
    }

    #[test]
    fn audio_buffer_validates() {
        assert!(AudioBuffer::new(0, vec![]).is_err());
        assert!(AudioBuffer::new(16000, vec![0.5, -1.0, 1.0]).is_ok());
        assert!(AudioBuffer::new(16000, vec![1.5]).is_err());
        assert!(AudioBuffer::new(16000, vec![f64::NAN]).is_err());
    }

    #[test]
    fn frame_count_formula() {
        let p = MelParams::default();
        // 10 s at 16 kHz: (160000 - 640) / 320 + 1 = 499.
        let audio = AudioBuffer::new(16000, vec![0.0; 160000]).unwrap();
        assert_eq!(log_mel(&audio, &p).unwrap().n_frames(), 499);
        // Exactly one window.
        let audio = AudioBuffer::new(16000, vec![0.0; 640]).unwrap();
        assert_eq!(log_mel(&audio, &p).unwrap().n_frames(), 1);
        // One sample short of a window: zero frames.
        let audio = AudioBuffer::new(16000, vec![0.0; 639]).unwrap();
        assert_eq!(log_mel(&audio, &p).unwrap().n_frames(), 0);
        // Spot-check the closed form over a range of lengths.
        for len in [640usize, 641, 959, 960, 961, 1600, 4321] {
            let audio = AudioBuffer::new(16000, vec![0.0; len]).unwrap();
            let expect = (len - 640) / 320 + 1;
            assert_eq!(log_mel(&audio, &p).unwrap().n_frames(), expect);
        }
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let audio = AudioBuffer::new(16000, vec![0.0; 16000]).unwrap();
        let f = log_mel(&audio, &MelParams::default()).unwrap();
        let floor = 1e-10f64.ln();
        for &v in f.values().iter() {
            assert_eq!(v, floor);
        }
    }

    #[test]
    fn filterbank_shape_and_positivity() {
        let p = MelParams::default();
        let bank = mel_filterbank(&p, 44100).unwrap();
        // 44.1 kHz, 40 ms window -> 1764 samples -> FFT 2048.
        assert_eq!(bank.dim(), (64, 1025));
        for row in bank.rows() {
            let sum: f64 = row.sum();
            assert!(sum > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        // Peak bins move strictly later from band to band at this resolution.
        let peaks: Vec<usize> = (0..64)
            .map(|b| {
                let row = bank.row(b);
                (0..row.len()).max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap()).unwrap()
            })
            .collect();
        for w in peaks.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn mel_centers_strictly_increase() {
        let centers = mel_centers(&MelParams::default(), 44100).unwrap();
        assert_eq!(centers.len(), 64);
        for w in centers.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(centers[0] > 0.0 && centers[63] < 22050.0);
    }

    #[test]
    fn single_band_spans_the_range() {
        let p = MelParams { n_mels: 1, ..MelParams::default() };
        let bank = mel_filterbank(&p, 16000).unwrap();
        let row = bank.row(0);
        let peak = (0..row.len()).max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap()).unwrap();
        let centers = mel_centers(&p, 16000).unwrap();
        let bin_hz = 16000.0 / 1024.0;
        assert!((peak as f64 * bin_hz - centers[0]).abs() < bin_hz);
    }

    #[test]
    fn too_many_bands_for_resolution_errors() {
        // 512-point FFT at 8 kHz cannot give 256 bands a nonzero bin each.
        let p = MelParams { n_mels: 256, ..MelParams::default() };
        match mel_filterbank(&p, 8000) {
            Err(Error::EmptyMelFilter { .. }) => {}
            other => panic!("expected EmptyMelFilter, got {other:?}"),
        }
    }

    #[test]
    fn sine_at_band_center_peaks_in_that_band() {
        let p = MelParams::default();
        let sr = 44100;
        let centers = mel_centers(&p, sr).unwrap();
        for &band in &[20usize, 32, 50] {
            let audio = sine(sr, centers[band], 1.0, 0.8);
            let f = log_mel(&audio, &p).unwrap();
            let mean: Vec<f64> =
                (0..64).map(|d| f.values().column(d).mean().unwrap()).collect();
            let argmax = (0..64).max_by(|&i, &j| mean[i].partial_cmp(&mean[j]).unwrap()).unwrap();
            assert_eq!(argmax, band, "tone at {} Hz", centers[band]);
        }
    }

    #[test]
    fn amplitude_scaling_adds_two_log_c() {
        let sr = 16000;
        let base = sine(sr, 440.0, 0.5, 0.4);
        let scaled = AudioBuffer::new(sr, base.samples().iter().map(|s| s * 2.0).collect()).unwrap();
        let p = MelParams::default();
        let fa = log_mel(&base, &p).unwrap();
        let fb = log_mel(&scaled, &p).unwrap();
        let floor = 1e-10f64.ln();
        let shift = 2.0 * 2.0f64.ln();
        let mut checked = 0;
        for (a, b) in fa.values().iter().zip(fb.values().iter()) {
            if *a > floor + 2.0 && *b > floor + 2.0 {
                assert_relative_eq!(b - a, shift, max_relative = 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn log_mel_is_deterministic() {
        let audio = sine(16000, 523.0, 0.3, 0.5);
        let p = MelParams::default();
        let a = log_mel(&audio, &p).unwrap();
        let b = log_mel(&audio, &p).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn norm_fit_and_apply() {
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha20Rng;
        use rand_distr::{Distribution, Normal};

        // Degenerate: constant matrix -> std floored, normalized to zeros.
        let constant = FeatureMatrix::new(Array2::from_elem((5, 3), 7.0)).unwrap();
        let stats = fit_norm(std::slice::from_ref(&constant)).unwrap();
        assert!(stats.std.iter().all(|&s| s == 1e-8));
        let normed = apply_norm(&constant, &stats).unwrap();
        assert!(normed.values().iter().all(|&v| v == 0.0));

        // Single frame behaves the same way.
        let single = FeatureMatrix::new(Array2::from_elem((1, 3), 2.5)).unwrap();
        let stats = fit_norm(std::slice::from_ref(&single)).unwrap();
        assert!(apply_norm(&single, &stats).unwrap().values().iter().all(|&v| v == 0.0));

        // Monte-Carlo: N(5, 2) on 12000 frames.
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let normal = Normal::new(5.0, 2.0).unwrap();
        let m = FeatureMatrix::new(Array2::from_shape_fn((12_000, 4), |_| {
            normal.sample(&mut rng)
        }))
        .unwrap();
        let stats = fit_norm(std::slice::from_ref(&m)).unwrap();
        for d in 0..4 {
            assert!((stats.mean[d] - 5.0).abs() < 0.1);
            assert!((stats.std[d] - 2.0).abs() < 0.1);
        }
        // Fit-then-apply recenters and rescales.
        let normed = apply_norm(&m, &stats).unwrap();
        let refit = fit_norm(std::slice::from_ref(&normed)).unwrap();
        for d in 0..4 {
            assert!(refit.mean[d].abs() < 1e-10);
            assert_relative_eq!(refit.std[d], 1.0, max_relative = 1e-10);
        }

        assert!(fit_norm(&[]).is_err());
        let empty = FeatureMatrix::new(Array2::zeros((0, 4))).unwrap();
        assert!(matches!(fit_norm(std::slice::from_ref(&empty)), Err(Error::EmptyNormFit)));
        let _ = rng.gen_range(0..2);
    }

    #[test]
    fn sedf_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.sedf");
        let audio = sine(16000, 440.0, 0.2, 0.5);
        let f = log_mel(&audio, &MelParams::default()).unwrap();
        write_features(&path, &f).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.values(), f.values());

        // Corrupt magic.
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_features(&path).is_err());

        // Truncated payload.
        write_features(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_features(&path).is_err());

        // Trailing junk.
        let mut bytes = bytes.clone();
        bytes.push(0x7f);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_features(&path).is_err());
    }

    #[test]
    fn wav_round_trip_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let audio = sine(16000, 440.0, 0.25, 0.5);
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.len(), audio.len());
        // 16-bit quantization error stays below one step.
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn wav_stereo_averages_to_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap(); // 0.5
            w.write_sample(-16384i16).unwrap(); // -0.5
        }
        w.finalize().unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.len(), 100);
        for &s in audio.samples() {
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn wav_float32_supported_and_24bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..50 {
            w.write_sample(0.01f32 * i as f32).unwrap();
        }
        w.finalize().unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.len(), 50);
        assert_relative_eq!(audio.samples()[10], 0.1, max_relative = 1e-6);

        let path24 = dir.path().join("i24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path24, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i32).unwrap();
        }
        w.finalize().unwrap();
        assert!(read_wav(&path24).is_err());
    }

    #[test]
    fn bad_mel_params_rejected() {
        let p = MelParams { fft_size: Some(100), ..MelParams::default() };
        assert!(mel_filterbank(&p, 16000).is_err()); // not a power of two
        let p = MelParams { fft_size: Some(512), ..MelParams::default() };
        assert!(mel_filterbank(&p, 16000).is_err()); // smaller than window
        let p = MelParams { f_max: Some(9000.0), ..MelParams::default() };
        assert!(mel_filterbank(&p, 16000).is_err()); // above Nyquist
        let p = MelParams { n_mels: 0, ..MelParams::default() };
        assert!(mel_filterbank(&p, 16000).is_err());
    }
}
