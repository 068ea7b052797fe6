//! IEEE 802.11 DCF slot-duration environment.
//!
//! Slot lengths depend on the channel outcome. With the 802.11a mode-8
//! defaults they come out, in bits at the data rate, as
//!
//! ```text
//! E[P]  = payload
//! σ_idle      = slot time
//! σ_success   = PHY hdr + MAC hdr + payload + SIFS + δ + ACK + DIFS + δ
//! σ_collision = PHY hdr + MAC hdr + payload + DIFS + δ
//! ```
//!
//! where `δ` is the propagation delay and the ACK frame is counted by its
//! octets only.

use serde::{Deserialize, Serialize};

use crate::error::{check_users, Error, Result};
use crate::markov::AggregateChain;
use crate::protocol::OnePeriodRule;

/// PHY/MAC parameters. Times are in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcfParameters {
    pub payload_octets: u64,
    pub mac_header_octets: u64,
    pub ack_octets: u64,
    pub data_rate_bps: u64,
    pub propagation_delay_ns: u64,
    pub slot_time_ns: u64,
    pub phy_header_ns: u64,
    pub sifs_ns: u64,
    pub difs_ns: u64,
}

impl Default for DcfParameters {
    fn default() -> Self {
        Self {
            payload_octets: 2304,
            mac_header_octets: 28,
            ack_octets: 14,
            data_rate_bps: 54_000_000,
            propagation_delay_ns: 1_000,
            slot_time_ns: 9_000,
            phy_header_ns: 20_000,
            sifs_ns: 16_000,
            difs_ns: 34_000,
        }
    }
}

impl DcfParameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("payload", self.payload_octets),
            ("mac header", self.mac_header_octets),
            ("ack", self.ack_octets),
            ("data rate", self.data_rate_bps),
            ("propagation delay", self.propagation_delay_ns),
            ("slot time", self.slot_time_ns),
            ("phy header", self.phy_header_ns),
            ("sifs", self.sifs_ns),
            ("difs", self.difs_ns),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidParameter(format!(
                    "DCF parameter `{name}` must be positive"
                )));
            }
        }
        Ok(())
    }

    fn bits(&self, ns: u64) -> f64 {
        (ns as u128 * self.data_rate_bps as u128) as f64 / 1e9
    }
}

/// Slot durations and payload, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDurations {
    pub payload: f64,
    pub idle: f64,
    pub success: f64,
    pub collision: f64,
}

impl SlotDurations {
    /// All durations equal the payload: the idealized slotted channel.
    pub fn unit() -> Self {
        Self {
            payload: 1.0,
            idle: 1.0,
            success: 1.0,
            collision: 1.0,
        }
    }

    /// Throughput with every slot a success.
    pub fn ceiling(&self) -> f64 {
        self.payload / self.success
    }

    /// `P₁E[P] / (P₀σ₀ + P₁σ₁ + P₂σ₂)`.
    pub fn weighted_throughput(&self, p_idle: f64, p_success: f64, p_collision: f64) -> f64 {
        let denom = p_idle * self.idle + p_success * self.success + p_collision * self.collision;
        if denom == 0.0 {
            0.0
        } else {
            p_success * self.payload / denom
        }
    }

    pub fn throughput_from_stationary(&self, pi: &[f64]) -> f64 {
        self.weighted_throughput(pi[0], pi[1], pi[2..].iter().sum())
    }
}

pub fn derive_durations(params: &DcfParameters) -> Result<SlotDurations> {
    params.validate()?;
    let payload = (params.payload_octets * 8) as f64;
    let header = params.bits(params.phy_header_ns) + (params.mac_header_octets * 8) as f64;
    let prop = params.bits(params.propagation_delay_ns);
    let difs = params.bits(params.difs_ns);
    let collision = header + payload + difs + prop;
    let success = header + payload + params.bits(params.sifs_ns) + prop + (params.ack_octets * 8) as f64 + difs + prop;
    Ok(SlotDurations {
        payload,
        idle: params.bits(params.slot_time_ns),
        success,
        collision,
    })
}

/// Duration-weighted throughput of a symmetric one-period rule.
pub fn dcf_throughput(rule: &OnePeriodRule, users: usize, durations: &SlotDurations) -> Result<f64> {
    let chain = AggregateChain::build(rule, users)?;
    Ok(durations.throughput_from_stationary(chain.stationary()))
}

/// Result of the saturated binary exponential backoff fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffFixedPoint {
    /// Per-slot transmission probability.
    pub transmit: f64,
    /// Conditional collision probability seen by a transmitter.
    pub collision: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Transmission probability of the saturated exponential backoff model with
/// `m = log2(cw_max / cw_min)` doubling stages:
///
/// `τ = 2 / (1 + W + pW Σ_{i<m} (2p)^i)`, `p = 1 − (1 − τ)^(N−1)`,
///
/// solved by damped fixed-point iteration starting from `2 / (W + 1)`.
pub fn eb_fixed_point(cw_min: u32, cw_max: u32, users: usize) -> Result<BackoffFixedPoint> {
    check_users(users)?;
    if cw_min == 0 || cw_max < cw_min || cw_max % cw_min != 0 || !(cw_max / cw_min).is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "cw_max / cw_min must be a power of two, got {cw_max} / {cw_min}"
        )));
    }
    let stages = (cw_max / cw_min).trailing_zeros() as i32;
    let w = cw_min as f64;
    let map = |tau: f64| {
        let p = 1.0 - (1.0 - tau).powi(users as i32 - 1);
        let series: f64 = (0..stages).map(|i| (2.0 * p).powi(i)).sum();
        (2.0 / (1.0 + w + p * w * series), p)
    };
    let damping = 0.5;
    let mut tau = 2.0 / (w + 1.0);
    for iterations in 1..=100_000 {
        let (next, _) = map(tau);
        let residual = (next - tau).abs();
        if residual < 1e-13 {
            let (image, p) = map(tau);
            return Ok(BackoffFixedPoint {
                transmit: tau,
                collision: p,
                residual: (image - tau).abs(),
                iterations,
            });
        }
        tau = damping * tau + (1.0 - damping) * next;
    }
    Err(Error::Infeasible(
        "exponential backoff fixed point did not converge".into(),
    ))
}

pub fn eb_probability(cw_min: u32, cw_max: u32, users: usize) -> Result<f64> {
    Ok(eb_fixed_point(cw_min, cw_max, users)?.transmit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::throughput;

    #[test]
    fn default_durations_are_exact() {
        let d = derive_durations(&DcfParameters::default()).unwrap();
        assert_eq!(
            (d.payload, d.idle, d.success, d.collision),
            (18432.0, 486.0, 22656.0, 21626.0)
        );
        assert!(d.idle < d.collision && d.collision <= d.success);
    }

    #[test]
    fn components() {
        let p = DcfParameters {
            payload_octets: 100,
            ..DcfParameters::default()
        };
        assert_eq!(derive_durations(&p).unwrap().payload, 800.0);
        let bad = DcfParameters {
            sifs_ns: 0,
            ..DcfParameters::default()
        };
        assert!(derive_durations(&bad).is_err());
    }

    #[test]
    fn unit_durations_reduce_to_success_probability() {
        for rule in [
            OnePeriodRule::tilde(7, 0.2).unwrap(),
            OnePeriodRule::new(0.3, 0.1, 0.7, 0.2).unwrap(),
        ] {
            let a = dcf_throughput(&rule, 7, &SlotDurations::unit()).unwrap();
            let b = throughput(&rule, 7).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        let zero = OnePeriodRule::uniform(0.0).unwrap();
        let d = derive_durations(&DcfParameters::default()).unwrap();
        assert_eq!(dcf_throughput(&zero, 4, &d).unwrap(), 0.0);
    }

    #[test]
    fn backoff_fixed_point() {
        let fp = eb_fixed_point(16, 1024, 10).unwrap();
        assert!(fp.residual < 1e-10);
        assert!(fp.transmit > 0.0 && fp.transmit < 1.0);
        let p5 = eb_probability(16, 1024, 5).unwrap();
        let p20 = eb_probability(16, 1024, 20).unwrap();
        assert!(p5 > p20);
        assert!(eb_probability(16, 1000, 10).is_err());
        assert!(eb_probability(16, 8, 10).is_err());
        // No doubling: plain uniform backoff gives 2 / (W + 1).
        assert!((eb_probability(16, 16, 10).unwrap() - 2.0 / 17.0).abs() < 1e-12);
    }
}
