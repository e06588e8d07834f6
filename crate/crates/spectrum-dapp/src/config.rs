use alloc::string::{String, ToString};

use crate::SenseError;

/// Runtime configuration of the sensing dApp.
///
/// Parsed from environment-style `key=value` lines (one per line, `#`
/// starts a comment) so the sandboxed build needs no filesystem access.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingConfig {
    pub dapp_id: u32,
    pub fft_size: u32,
    pub n_prb: u16,
    /// Detection margin above the median noise floor.
    pub threshold_db: f64,
    pub agent_host: String,
    pub agent_port: u16,
    /// Requested indication period; 0 lets the agent choose.
    pub period_us: u32,
    /// Record per-loop stage timings.
    pub instrument: bool,
    /// When set, the dApp listens on this port and hands its stage log to
    /// the first collector that connects after the stream ends.
    pub stage_log_port: Option<u16>,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            dapp_id: 1,
            fft_size: 1024,
            n_prb: 64,
            threshold_db: 6.0,
            agent_host: "localhost".to_string(),
            agent_port: 9990,
            period_us: 0,
            instrument: false,
            stage_log_port: None,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<(), SenseError> {
        let size = self.fft_size;
        if size == 0 || !size.is_power_of_two() {
            return Err(SenseError::NonPowerOfTwo(size as usize));
        }
        if self.n_prb == 0 || size % u32::from(self.n_prb) != 0 {
            return Err(SenseError::InvalidConfig("fft_size must be a multiple of n_prb"));
        }
        if !(self.threshold_db > 0.0) {
            return Err(SenseError::InvalidConfig("threshold_db must be positive"));
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, SenseError> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(SenseError::InvalidConfig("expected key=value"))?;
            let value = value.trim();
            let bad = |_| SenseError::InvalidConfig("unparsable value");
            match key.trim() {
                "dapp_id" => cfg.dapp_id = value.parse().map_err(bad)?,
                "fft_size" => cfg.fft_size = value.parse().map_err(bad)?,
                "n_prb" => cfg.n_prb = value.parse().map_err(bad)?,
                "threshold_db" => {
                    cfg.threshold_db = value
                        .parse()
                        .map_err(|_| SenseError::InvalidConfig("unparsable threshold_db"))?
                }
                "agent_host" => cfg.agent_host = value.to_string(),
                "agent_port" => cfg.agent_port = value.parse().map_err(bad)?,
                "period_us" => cfg.period_us = value.parse().map_err(bad)?,
                "instrument" => {
                    cfg.instrument = matches!(value, "1" | "true" | "yes" | "on")
                }
                "stage_log_port" => {
                    cfg.stage_log_port = match value {
                        "" | "none" => None,
                        v => Some(v.parse().map_err(bad)?),
                    }
                }
                _ => return Err(SenseError::InvalidConfig("unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`SensingConfig::parse`].
    pub fn to_env(&self) -> String {
        let mut s = alloc::format!(
            "dapp_id={}\nfft_size={}\nn_prb={}\nthreshold_db={}\nagent_host={}\nagent_port={}\nperiod_us={}\ninstrument={}\n",
            self.dapp_id,
            self.fft_size,
            self.n_prb,
            self.threshold_db,
            self.agent_host,
            self.agent_port,
            self.period_us,
            self.instrument,
        );
        if let Some(p) = self.stage_log_port {
            s.push_str(&alloc::format!("stage_log_port={p}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let cfg = SensingConfig {
            dapp_id: 42,
            fft_size: 256,
            n_prb: 16,
            threshold_db: 7.5,
            agent_host: "agent".into(),
            agent_port: 1234,
            period_us: 2000,
            instrument: true,
            stage_log_port: Some(5555),
        };
        assert_eq!(SensingConfig::parse(&cfg.to_env()).unwrap(), cfg);
    }

    #[test]
    fn parse_comments_and_defaults() {
        let cfg = SensingConfig::parse("# sensing\n\nn_prb = 32 # half\n").unwrap();
        assert_eq!(cfg.n_prb, 32);
        assert_eq!(cfg.fft_size, 1024);
    }

    #[test]
    fn invalid_configs() {
        assert!(SensingConfig::parse("fft_size=1000").is_err());
        assert!(SensingConfig::parse("n_prb=48").is_err());
        assert!(SensingConfig::parse("threshold_db=0").is_err());
        assert!(SensingConfig::parse("threshold_db=nan").is_err());
        assert!(SensingConfig::parse("colour=blue").is_err());
        assert!(SensingConfig::parse("just text").is_err());
    }
}
