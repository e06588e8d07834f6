//! Energy detection over physical resource blocks.
//!
//! The spectrum is split into `n_prb` equal groups of `fft_size / n_prb`
//! bins. A PRB is occupied when its mean bin energy exceeds the median PRB
//! energy by more than `threshold_db`. The median tracks the noise floor as
//! long as fewer than half the PRBs are occupied.
//!
//! Samples travel as f32, so a noiseless frame still carries rounding
//! residue around -140 dB relative to the signal. Without noise the median
//! can land on that residue and flag it. The floor is therefore clamped to
//! at least [`RESOLUTION_DB`] below the mean PRB energy.

use alloc::vec;
use alloc::vec::Vec;

use e3_codec::{IqFrame, PrbBlocklist};

use crate::config::SensingConfig;
use crate::fft::{Complex, Fft};
use crate::SenseError;

/// Smallest floor, relative to the mean PRB energy, the detector will use.
pub const RESOLUTION_DB: f64 = -120.0;

/// Mean `|X[k]|^2` per PRB.
#[derive(Debug, Clone, PartialEq)]
pub struct PrbEnergyMap {
    pub energies: Vec<f64>,
}

impl PrbEnergyMap {
    /// Median energy (the mean of the two middle values for even lengths),
    /// but no lower than [`RESOLUTION_DB`] below the mean energy.
    pub fn noise_floor(&self) -> f64 {
        if self.energies.is_empty() {
            return 0.0;
        }
        let mean = self.energies.iter().sum::<f64>() / self.energies.len() as f64;
        median(&self.energies).max(mean * libm::pow(10.0, RESOLUTION_DB / 10.0))
    }

    /// PRBs whose energy is strictly above `floor * 10^(threshold_db/10)`.
    pub fn detect(&self, threshold_db: f64) -> Vec<u16> {
        let limit = self.noise_floor() * libm::pow(10.0, threshold_db / 10.0);
        self.energies
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > limit)
            .map(|(p, _)| p as u16)
            .collect()
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Reusable sensing pipeline: FFT plan and scratch buffer survive across
/// frames.
#[derive(Debug, Clone)]
pub struct Sensor {
    fft: Fft,
    n_prb: u16,
    threshold_db: f64,
    scratch: Vec<Complex>,
}

impl Sensor {
    pub fn new(cfg: &SensingConfig) -> Result<Self, SenseError> {
        cfg.validate()?;
        let size = cfg.fft_size as usize;
        Ok(Self {
            fft: Fft::new(size)?,
            n_prb: cfg.n_prb,
            threshold_db: cfg.threshold_db,
            scratch: vec![Complex::ZERO; size],
        })
    }

    pub fn energies(&mut self, frame: &IqFrame) -> Result<PrbEnergyMap, SenseError> {
        let size = self.fft.size();
        if frame.n_samples() != size {
            return Err(SenseError::SampleCountMismatch {
                expected: size,
                got: frame.n_samples(),
            });
        }
        for (dst, s) in self.scratch.iter_mut().zip(&frame.samples) {
            *dst = Complex::new(f64::from(s.i), f64::from(s.q));
        }
        self.fft.process(&mut self.scratch)?;
        let bins = size / self.n_prb as usize;
        let energies = self
            .scratch
            .chunks_exact(bins)
            .map(|prb| prb.iter().map(|c| c.norm_sqr()).sum::<f64>() / bins as f64)
            .collect();
        Ok(PrbEnergyMap { energies })
    }

    /// Occupied PRBs in `frame` as a blocklist.
    pub fn sense(&mut self, frame: &IqFrame) -> Result<PrbBlocklist, SenseError> {
        let occupied = self.energies(frame)?.detect(self.threshold_db);
        Ok(PrbBlocklist::from_indices(self.n_prb, occupied).expect("indices below n_prb"))
    }
}

/// One-shot convenience over [`Sensor`].
pub fn sense(frame: &IqFrame, cfg: &SensingConfig) -> Result<PrbBlocklist, SenseError> {
    Sensor::new(cfg)?.sense(frame)
}
