//! Macro-pulse windows cut from long acquisition records.

use crate::data::waveform::WaveformTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_PULSES_PER_RECORD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseMode {
    /// Every complete pulse in the record, up to three.
    Normal,
    /// Only the first pulse (the one preceding the fault).
    Prefault,
}

/// Pulse `k` occupies `[first_offset + k * period, .. + pulse_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseLayout {
    pub pulse_len: usize,
    pub first_offset: usize,
    pub period: usize,
}

impl PulseLayout {
    pub fn window(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.first_offset + k * self.period;
        start..start + self.pulse_len
    }
}

/// Cuts pulses from each record of `raw` (records x record-length x channels).
/// Output rows inherit the record's module and label, ordered by record then
/// pulse.
pub fn extract_macropulses(raw: &WaveformTensor, layout: PulseLayout, mode: PulseMode) -> Result<WaveformTensor> {
    if layout.pulse_len == 0 || layout.period == 0 {
        return Err(Error::Config("pulse length and period must be positive".into()));
    }
    let len = raw.time_steps();
    let c = raw.channels();
    let available = (0..MAX_PULSES_PER_RECORD)
        .take_while(|&k| layout.window(k).end <= len)
        .count();
    if available == 0 {
        return Err(Error::Data(format!(
            "record of {len} steps is too short for a {}-step pulse at offset {}",
            layout.pulse_len, layout.first_offset
        )));
    }
    let per_record = match mode {
        PulseMode::Normal => available,
        PulseMode::Prefault => 1,
    };
    let n = raw.len() * per_record;
    let mut data = Vec::with_capacity(n * layout.pulse_len * c);
    let mut modules = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for r in 0..raw.len() {
        let rec = raw.sample(r);
        for k in 0..per_record {
            let w = layout.window(k);
            data.extend_from_slice(&rec[w.start * c..w.end * c]);
            modules.push(raw.module_ids()[r]);
            labels.push(raw.labels()[r]);
            ids.push(raw.sample_ids()[r] * MAX_PULSES_PER_RECORD as u64 + k as u64);
        }
    }
    WaveformTensor::with_ids(
        Tensor::new(vec![n, layout.pulse_len, c], data)?,
        raw.channel_names().to_vec(),
        raw.module_count(),
        modules,
        labels,
        ids,
    )
}
