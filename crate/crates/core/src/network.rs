//! Simulated links and the communication-overhead calculator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkModel {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            bandwidth_bps: 100e6,
            latency_s: 0.0,
        }
    }
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_bps.is_nan() || self.bandwidth_bps <= 0.0 || self.latency_s.is_nan() || self.latency_s < 0.0 {
            return Err(Error::config("bandwidth must be positive and latency non-negative"));
        }
        Ok(())
    }

    pub fn transfer_seconds(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth_bps + self.latency_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    pub prompt_params: u64,
    pub full_params: u64,
    pub bytes_per_param: u64,
    /// Binary megabytes (MiB).
    pub mb_prompt: f64,
    pub mb_full: f64,
    pub reduction_percent: f64,
    pub seconds_per_upload_prompt: f64,
    pub seconds_per_upload_full: f64,
}

pub fn overhead_report(
    prompt_params: u64,
    full_params: u64,
    bytes_per_param: u64,
    network: NetworkModel,
) -> Result<OverheadReport> {
    if prompt_params == 0 || full_params == 0 || bytes_per_param == 0 {
        return Err(Error::Domain("parameter counts and bytes per parameter must be positive".into()));
    }
    network.validate()?;
    let prompt_bytes = prompt_params * bytes_per_param;
    let full_bytes = full_params * bytes_per_param;
    Ok(OverheadReport {
        prompt_params,
        full_params,
        bytes_per_param,
        mb_prompt: prompt_bytes as f64 / MIB,
        mb_full: full_bytes as f64 / MIB,
        reduction_percent: 100.0 * (1.0 - prompt_bytes as f64 / full_bytes as f64),
        seconds_per_upload_prompt: network.transfer_seconds(prompt_bytes as usize),
        seconds_per_upload_full: network.transfer_seconds(full_bytes as usize),
    })
}
