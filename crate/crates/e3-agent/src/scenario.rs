//! Scenario description and synthetic I/Q generation.

use std::f64::consts::PI;
use std::path::Path;

use e3_codec::{Iq, IqFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::AgentError;

/// A narrowband transmitter occupying one PRB while active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub prb: u16,
    pub amplitude: f64,
    #[serde(default)]
    pub start_us: u64,
    #[serde(default = "forever")]
    pub stop_us: u64,
}

fn forever() -> u64 {
    u64::MAX
}

impl Incumbent {
    pub fn always(prb: u16, amplitude: f64) -> Self {
        Self {
            prb,
            amplitude,
            start_us: 0,
            stop_us: u64::MAX,
        }
    }

    /// Active on `[start_us, stop_us)` of scenario time.
    pub fn active_at(&self, t_us: u64) -> bool {
        (self.start_us..self.stop_us).contains(&t_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_prb: u16,
    pub fft_size: u32,
    /// Per-component standard deviation of the complex Gaussian noise.
    pub noise_sigma: f64,
    #[serde(default)]
    pub incumbents: Vec<Incumbent>,
    pub indication_period_us: u32,
    pub duration_us: u64,
    pub seed: u64,
}

/// Smallest indication period a subscription may ask for.
pub const MIN_PERIOD_US: u32 = 100;

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_prb: 64,
            fft_size: 1024,
            noise_sigma: sigma_for_snr(1.0, 20.0),
            incumbents: vec![Incumbent::always(3, 1.0), Incumbent::always(40, 1.0)],
            indication_period_us: 1_000,
            duration_us: 1_000_000,
            seed: 1,
        }
    }
}

/// Noise sigma that gives `snr_db` for a tone of `amplitude`, with
/// SNR = 10·log10(A² / 2σ²).
pub fn sigma_for_snr(amplitude: f64, snr_db: f64) -> f64 {
    (amplitude * amplitude / (2.0 * 10f64.powf(snr_db / 10.0))).sqrt()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidScenario(m.to_string()));
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return bad("fft_size must be a power of two");
        }
        if self.n_prb == 0 || self.fft_size % u32::from(self.n_prb) != 0 {
            return bad("fft_size must be a multiple of n_prb");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be a finite non-negative number");
        }
        if self.indication_period_us < MIN_PERIOD_US {
            return bad("indication_period_us must be at least 100");
        }
        for inc in &self.incumbents {
            if inc.prb >= self.n_prb {
                return bad("incumbent prb out of range");
            }
            if !(inc.amplitude >= 0.0) || !inc.amplitude.is_finite() {
                return bad("incumbent amplitude must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn bins_per_prb(&self) -> u32 {
        self.fft_size / u32::from(self.n_prb)
    }

    /// FFT bin carrying the tone of an incumbent on `prb`.
    pub fn tone_bin(&self, prb: u16) -> u32 {
        let b = self.bins_per_prb();
        u32::from(prb) * b + b / 2
    }

    /// SNR in dB of an incumbent, or infinity without noise.
    pub fn snr_db(&self, amplitude: f64) -> f64 {
        10.0 * (amplitude * amplitude / (2.0 * self.noise_sigma * self.noise_sigma)).log10()
    }

    /// PRBs with an incumbent active at `t_us`, ascending.
    pub fn occupied_at(&self, t_us: u64) -> Vec<u16> {
        let mut prbs: Vec<u16> = self
            .incumbents
            .iter()
            .filter(|i| i.active_at(t_us) && i.amplitude > 0.0)
            .map(|i| i.prb)
            .collect();
        prbs.sort_unstable();
        prbs.dedup();
        prbs
    }

    /// Number of indications a stream with `period_us` sends.
    pub fn indication_count(&self, period_us: u32) -> u32 {
        let n = self.duration_us.div_ceil(u64::from(period_us.max(1)));
        n.min(u64::from(u32::MAX)) as u32
    }
}

/// The generator used for the frame at scenario time `t_us`: one ChaCha
/// stream per timestamp, so frames are reproducible independently of order.
pub fn frame_rng(seed: u64, t_us: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t_us);
    rng
}

/// Builds `fft_size` samples of complex Gaussian noise plus one tone per
/// incumbent active at `t_us`.
pub fn gen_iq_frame<R: Rng + ?Sized>(cfg: &ScenarioConfig, t_us: u64, rng: &mut R) -> IqFrame {
    let n = cfg.fft_size as usize;
    let mut acc = vec![(0f64, 0f64); n];
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for s in &mut acc {
            s.0 = normal.sample(rng);
            s.1 = normal.sample(rng);
        }
    }
    for inc in cfg.incumbents.iter().filter(|i| i.active_at(t_us)) {
        let bin = cfg.tone_bin(inc.prb) as usize;
        for (j, s) in acc.iter_mut().enumerate() {
            // Reduce the phase index exactly before going to floating point.
            let phase = 2.0 * PI * ((bin * j) % n) as f64 / n as f64;
            s.0 += inc.amplitude * phase.cos();
            s.1 += inc.amplitude * phase.sin();
        }
    }
    IqFrame::new(acc.into_iter().map(|(i, q)| Iq::new(i as f32, q as f32)).collect())
}

/// [`gen_iq_frame`] with the scenario's own seed.
pub fn frame_at(cfg: &ScenarioConfig, t_us: u64) -> IqFrame {
    gen_iq_frame(cfg, t_us, &mut frame_rng(cfg.seed, t_us))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_defaults() {
        let cfg = ScenarioConfig::from_json(
            r#"{"n_prb":16,"fft_size":256,"noise_sigma":0.1,
                "incumbents":[{"prb":2,"amplitude":1.0,"stop_us":500}],
                "indication_period_us":1000,"duration_us":10000,"seed":7}"#,
        )
        .unwrap();
        assert_eq!(cfg.incumbents[0].start_us, 0);
        assert!(cfg.incumbents[0].active_at(499));
        assert!(!cfg.incumbents[0].active_at(500));
        assert_eq!(cfg.indication_count(1000), 10);
        assert_eq!(cfg.indication_count(3000), 4);
    }

    #[test]
    fn rejects_invalid() {
        let base = ScenarioConfig::default();
        for (cfg, _) in [
            (ScenarioConfig { fft_size: 1000, ..base.clone() }, "pow2"),
            (ScenarioConfig { n_prb: 48, ..base.clone() }, "multiple"),
            (ScenarioConfig { noise_sigma: -1.0, ..base.clone() }, "sigma"),
            (ScenarioConfig { indication_period_us: 99, ..base.clone() }, "period"),
            (ScenarioConfig { incumbents: vec![Incumbent::always(64, 1.0)], ..base.clone() }, "prb"),
            (ScenarioConfig { incumbents: vec![Incumbent::always(1, -1.0)], ..base.clone() }, "amp"),
        ] {
            assert!(cfg.validate().is_err());
        }
        base.validate().unwrap();
    }

    #[test]
    fn twenty_db() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.snr_db(1.0) - 20.0).abs() < 1e-12);
        assert!((cfg.noise_sigma - (1.0f64 / 200.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn silent_frame_is_zero() {
        let cfg = ScenarioConfig {
            noise_sigma: 0.0,
            incumbents: vec![],
            ..Default::default()
        };
        assert!(frame_at(&cfg, 5).samples.iter().all(|s| s.i == 0.0 && s.q == 0.0));
    }

    #[test]
    fn deterministic_per_timestamp() {
        let cfg = ScenarioConfig::default();
        assert_eq!(frame_at(&cfg, 3000), frame_at(&cfg, 3000));
        assert_ne!(frame_at(&cfg, 3000), frame_at(&cfg, 4000));
    }
}
