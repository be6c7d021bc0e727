use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conf::{ConfigError, FlatConfig};

use super::SessionError;

pub const MAX_PACKET_SIZE: usize = 65_000;
/// Upper bound on packets per session, which bounds trace memory.
pub const MAX_PACKETS: f64 = 1e8;

/// Constant-rate synthetic user-plane traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficProfile {
    /// Payload bytes per packet, before ESP overhead.
    pub packet_size: usize,
    /// Packets per second.
    pub rate: u64,
    /// Seconds.
    pub duration: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self {
            packet_size: 1200,
            rate: 10_000,
            duration: 10.0,
        }
    }
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidProfile(m));
        if !(1..=MAX_PACKET_SIZE).contains(&self.packet_size) {
            return bad(format!(
                "packet_size {} outside [1, {MAX_PACKET_SIZE}]",
                self.packet_size
            ));
        }
        if self.rate == 0 {
            return bad("rate must be positive".into());
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration {} must be a non-negative number", self.duration));
        }
        if self.rate as f64 * self.duration > MAX_PACKETS {
            return bad(format!(
                "rate x duration = {} exceeds {MAX_PACKETS}",
                self.rate as f64 * self.duration
            ));
        }
        Ok(())
    }

    pub fn packet_count(&self) -> u64 {
        (self.rate as f64 * self.duration).round() as u64
    }

    /// Scheduled send offset of packet `k` (0-based) in nanoseconds.
    pub fn send_offset_ns(&self, k: u64) -> u64 {
        (u128::from(k) * 1_000_000_000 / u128::from(self.rate)) as u64
    }

    /// Reads `packet_size`, `rate` and `duration`, keeping defaults for
    /// absent keys.
    pub fn take_from(conf: &mut FlatConfig) -> Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            packet_size: conf.take_parsed("packet_size")?.unwrap_or(d.packet_size),
            rate: conf.take_parsed("rate")?.unwrap_or(d.rate),
            duration: conf.take_parsed("duration")?.unwrap_or(d.duration),
        })
    }
}

/// Emulated link between DU and RU.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelModel {
    pub base_delay_us: f64,
    /// Half-width of the uniform delay perturbation.
    pub delay_jitter_us: f64,
    pub loss_rate: f64,
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidProfile(m));
        if !(self.base_delay_us.is_finite() && self.base_delay_us >= 0.0) {
            return bad(format!("base_delay_us {} must be non-negative", self.base_delay_us));
        }
        if !(self.delay_jitter_us.is_finite() && self.delay_jitter_us >= 0.0) {
            return bad(format!("delay_jitter_us {} must be non-negative", self.delay_jitter_us));
        }
        if self.delay_jitter_us > self.base_delay_us {
            return bad(format!(
                "delay_jitter_us {} exceeds base_delay_us {}; delays would go negative",
                self.delay_jitter_us, self.base_delay_us
            ));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return bad(format!("loss_rate {} outside [0, 1]", self.loss_rate));
        }
        Ok(())
    }

    /// Smallest delay the channel can produce, in ns.
    pub fn min_delay_ns(&self) -> u64 {
        ((self.base_delay_us - self.delay_jitter_us) * 1e3).round() as u64
    }

    pub fn base_delay_ns(&self) -> u64 {
        (self.base_delay_us * 1e3).round() as u64
    }

    pub fn take_from(conf: &mut FlatConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            base_delay_us: conf.take_parsed("base_delay_us")?.unwrap_or(0.0),
            delay_jitter_us: conf.take_parsed("delay_jitter_us")?.unwrap_or(0.0),
            loss_rate: conf.take_parsed("loss_rate")?.unwrap_or(0.0),
        })
    }
}

/// Fate of one packet: dropped (`None`) or delivered after the returned
/// number of nanoseconds. Always consumes two draws from `rng`, so the
/// drop pattern does not depend on the delay settings.
pub fn inject_channel(channel: &ChannelModel, rng: &mut ChaCha8Rng) -> Option<u64> {
    let loss_draw: f64 = rng.gen();
    let jitter_draw: f64 = rng.gen_range(-1.0..=1.0);
    if loss_draw < channel.loss_rate {
        return None;
    }
    let us = channel.base_delay_us + jitter_draw * channel.delay_jitter_us;
    Some((us * 1e3).round().max(0.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn run(channel: ChannelModel, n: usize) -> Vec<Option<u64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..n).map(|_| inject_channel(&channel, &mut rng)).collect()
    }

    #[test]
    fn full_loss_drops_everything() {
        let c = ChannelModel {
            loss_rate: 1.0,
            ..Default::default()
        };
        assert!(run(c, 1000).iter().all(Option::is_none));
    }

    #[test]
    fn half_loss_within_binomial_interval() {
        let c = ChannelModel {
            loss_rate: 0.5,
            ..Default::default()
        };
        let delivered = run(c, 10_000).iter().filter(|x| x.is_some()).count();
        assert!((4700..=5300).contains(&delivered), "{delivered}");
    }

    #[test]
    fn zero_jitter_is_exact() {
        let c = ChannelModel {
            base_delay_us: 500.0,
            ..Default::default()
        };
        assert!(run(c, 1000).iter().all(|d| *d == Some(500_000)));
    }

    #[test]
    fn jitter_stays_in_band() {
        let c = ChannelModel {
            base_delay_us: 450.0,
            delay_jitter_us: 170.0,
            loss_rate: 0.0,
        };
        for d in run(c, 10_000) {
            let d = d.unwrap();
            assert!((280_000..=620_000).contains(&d));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let c = ChannelModel {
            base_delay_us: 100.0,
            delay_jitter_us: 50.0,
            loss_rate: 0.1,
        };
        assert_eq!(run(c, 500), run(c, 500));
    }

    #[test]
    fn profile_validation() {
        assert!(TrafficProfile::default().validate().is_ok());
        let p = TrafficProfile {
            rate: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = TrafficProfile {
            packet_size: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = TrafficProfile {
            packet_size: 65_001,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = TrafficProfile {
            rate: 10_000_000,
            duration: 11.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert_eq!(TrafficProfile::default().packet_count(), 100_000);
        assert_eq!(TrafficProfile::default().send_offset_ns(3), 300_000);
    }

    #[test]
    fn channel_validation() {
        let c = ChannelModel {
            base_delay_us: 10.0,
            delay_jitter_us: 20.0,
            loss_rate: 0.0,
        };
        assert!(c.validate().is_err());
        let c = ChannelModel {
            loss_rate: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
