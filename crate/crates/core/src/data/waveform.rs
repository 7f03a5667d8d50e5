//! Labelled rank-3 waveform container.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical channel order.
pub const CHANNEL_NAMES: [&str; 14] = [
    "IGBT-A+", "IGBT-A+*", "IGBT-B+", "IGBT-B+*", "IGBT-C+", "IGBT-C+*", "FLUX-A", "FLUX-B", "FLUX-C", "CB-V",
    "CB-I", "MOD-V", "MOD-I", "DV/DT",
];

pub const CH_IGBT: [usize; 6] = [0, 1, 2, 3, 4, 5];
pub const CH_FLUX: [usize; 3] = [6, 7, 8];
pub const CH_CBV: usize = 9;
pub const CH_CBI: usize = 10;
pub const CH_MODV: usize = 11;
pub const CH_MODI: usize = 12;
pub const CH_DVDT: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultClass {
    DvDt,
    Flux,
    Igbt,
    Driver,
    Scr,
    SnsPps,
}

impl FaultClass {
    pub const ALL: [FaultClass; 6] = [
        FaultClass::DvDt,
        FaultClass::Flux,
        FaultClass::Igbt,
        FaultClass::Driver,
        FaultClass::Scr,
        FaultClass::SnsPps,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultClass::DvDt => "DV/DT",
            FaultClass::Flux => "FLUX",
            FaultClass::Igbt => "IGBT",
            FaultClass::Driver => "Driver",
            FaultClass::Scr => "SCR",
            FaultClass::SnsPps => "SNS-PPS",
        }
    }

    /// File-name friendly form, e.g. `roc_dvdt.csv`.
    pub fn slug(self) -> &'static str {
        match self {
            FaultClass::DvDt => "dvdt",
            FaultClass::Flux => "flux",
            FaultClass::Igbt => "igbt",
            FaultClass::Driver => "driver",
            FaultClass::Scr => "scr",
            FaultClass::SnsPps => "sns_pps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        FaultClass::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(t) || f.slug().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unknown fault class '{s}'")))
    }

    /// Channels physically tied to this fault.
    pub fn designated_channels(self) -> Vec<usize> {
        match self {
            FaultClass::DvDt => vec![CH_MODV, CH_DVDT],
            FaultClass::Flux => CH_FLUX.to_vec(),
            FaultClass::Igbt | FaultClass::Driver => CH_IGBT.to_vec(),
            FaultClass::Scr => vec![CH_MODV, CH_MODI, CH_DVDT],
            FaultClass::SnsPps => (0..CHANNEL_NAMES.len()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Fault(FaultClass),
}

impl Label {
    /// 0 for normal, 1..=6 for the fault classes.
    pub fn code(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Fault(f) => f.index() as u8 + 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Label::Normal),
            c if (c as usize) <= FaultClass::ALL.len() => Ok(Label::Fault(FaultClass::ALL[c as usize - 1])),
            c => Err(Error::Format(format!("unknown label code {c}"))),
        }
    }

    pub fn is_normal(self) -> bool {
        self == Label::Normal
    }

    pub fn fault(self) -> Option<FaultClass> {
        match self {
            Label::Normal => None,
            Label::Fault(f) => Some(f),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("normal") {
            Ok(Label::Normal)
        } else {
            FaultClass::parse(s).map(Label::Fault)
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => f.write_str("normal"),
            Label::Fault(c) => f.write_str(c.name()),
        }
    }
}

/// Samples x time-steps x channels, with per-sample module and label.
///
/// `sample_ids` identify rows across splits; they are not persisted (a file
/// loads with ids `0..n`).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTensor {
    data: Tensor,
    channel_names: Vec<String>,
    module_count: usize,
    module_ids: Vec<usize>,
    labels: Vec<Label>,
    sample_ids: Vec<u64>,
}

impl WaveformTensor {
    pub fn new(
        data: Tensor,
        channel_names: Vec<String>,
        module_count: usize,
        module_ids: Vec<usize>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let n = data.dims().first().copied().unwrap_or(0);
        let ids = (0..n as u64).collect();
        Self::with_ids(data, channel_names, module_count, module_ids, labels, ids)
    }

    pub fn with_ids(
        data: Tensor,
        channel_names: Vec<String>,
        module_count: usize,
        module_ids: Vec<usize>,
        labels: Vec<Label>,
        sample_ids: Vec<u64>,
    ) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::Shape(format!("waveform tensor must be rank 3, got {:?}", data.dims())));
        }
        let n = data.dims()[0];
        if channel_names.len() != data.dims()[2] {
            return Err(Error::Shape(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.dims()[2]
            )));
        }
        if module_ids.len() != n || labels.len() != n || sample_ids.len() != n {
            return Err(Error::Shape(format!("per-sample metadata does not cover {n} samples")));
        }
        if let Some(&m) = module_ids.iter().find(|&&m| m >= module_count) {
            return Err(Error::Data(format!("module id {m} outside {module_count} modules")));
        }
        Ok(Self {
            data,
            channel_names,
            module_count,
            module_ids,
            labels,
            sample_ids,
        })
    }

    pub fn canonical_names() -> Vec<String> {
        CHANNEL_NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn module_count(&self) -> usize {
        self.module_count
    }

    pub fn module_ids(&self) -> &[usize] {
        &self.module_ids
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.module_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.module_ids.is_empty()
    }

    pub fn time_steps(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[2]
    }

    /// One sample as a flat `time x channels` slice.
    pub fn sample(&self, i: usize) -> &[f32] {
        self.data.row(i)
    }

    pub(crate) fn data_mut(&mut self) -> &mut Tensor {
        &mut self.data
    }

    /// Rows at `indices`, in that order. Errors when `indices` is empty.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let data = self.data.select_rows(indices)?;
        Ok(Self {
            data,
            channel_names: self.channel_names.clone(),
            module_count: self.module_count,
            module_ids: indices.iter().map(|&i| self.module_ids[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
        })
    }

    pub fn indices_where(&self, pred: impl Fn(usize, Label) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| pred(self.module_ids[i], self.labels[i]))
            .collect()
    }

    /// Samples matching the predicate, or `None` if there are none.
    pub fn filter(&self, pred: impl Fn(usize, Label) -> bool) -> Result<Option<Self>> {
        let idx = self.indices_where(pred);
        if idx.is_empty() {
            Ok(None)
        } else {
            self.select(&idx).map(Some)
        }
    }

    /// Batch input tensor and module ids for the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.data.select_rows(indices)?;
        Ok((x, indices.iter().map(|&i| self.module_ids[i]).collect()))
    }

    pub fn concat(parts: &[&WaveformTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        for p in parts {
            if p.channel_names != first.channel_names || p.module_count != first.module_count {
                return Err(Error::Shape("concatenating incompatible waveform tensors".into()));
            }
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &p.data).collect();
        Ok(Self {
            data: Tensor::stack_rows(&tensors)?,
            channel_names: first.channel_names.clone(),
            module_count: first.module_count,
            module_ids: parts.iter().flat_map(|p| p.module_ids.iter().copied()).collect(),
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            sample_ids: parts.iter().flat_map(|p| p.sample_ids.iter().copied()).collect(),
        })
    }

    /// Per-module, per-label sample counts, sorted.
    pub fn counts(&self) -> Vec<((usize, Label), usize)> {
        let mut map = std::collections::BTreeMap::new();
        for (&m, &l) in self.module_ids.iter().zip(&self.labels) {
            *map.entry((m, l)).or_insert(0usize) += 1;
        }
        map.into_iter().collect()
    }
}
