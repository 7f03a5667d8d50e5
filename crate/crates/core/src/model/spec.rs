use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{conv_out_len, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Unconditioned VAE, one model per module.
    Vae,
    /// One-hot module-conditioned VAE shared by every module.
    Cvae,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Vae => "vae",
            ModelMode::Cvae => "cvae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vae" => Ok(ModelMode::Vae),
            "cvae" => Ok(ModelMode::Cvae),
            other => Err(Error::Config(format!("unknown model mode '{other}'"))),
        }
    }
}

/// Architecture hyperparameters for the conv encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub mode: ModelMode,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub kernels_per_block: usize,
    /// Optional per-block filter counts for the encoder; the decoder mirrors
    /// them. Empty means every block uses `kernels_per_block`.
    pub block_kernels: Vec<usize>,
    pub kernel_width: usize,
    /// Leading encoder blocks that halve the time axis (stride 2); the
    /// trailing decoder blocks undo them by nearest-neighbour upsampling.
    pub downsample_blocks: usize,
    pub dense_units: usize,
    pub latent_dim: usize,
    pub module_count: usize,
    pub time_steps: usize,
    pub channels: usize,
}

impl ModelSpec {
    /// Full-size architecture: 3+3 conv blocks of 128 width-3 kernels,
    /// 512 dense units, 512 latent dimensions, 4500 x 14 inputs.
    pub fn full(mode: ModelMode) -> Self {
        Self {
            mode,
            encoder_blocks: 3,
            decoder_blocks: 3,
            kernels_per_block: 128,
            block_kernels: Vec::new(),
            kernel_width: 3,
            downsample_blocks: 3,
            dense_units: 512,
            latent_dim: 512,
            module_count: 15,
            time_steps: 4500,
            channels: 14,
        }
    }

    /// CPU-sized variant used by default.
    pub fn desk(mode: ModelMode) -> Self {
        Self {
            kernels_per_block: 16,
            dense_units: 64,
            latent_dim: 32,
            time_steps: 512,
            ..Self::full(mode)
        }
    }

    pub fn condition_width(&self) -> usize {
        match self.mode {
            ModelMode::Vae => 0,
            ModelMode::Cvae => self.module_count,
        }
    }

    pub fn encoder_kernels(&self) -> Vec<usize> {
        if self.block_kernels.is_empty() {
            vec![self.kernels_per_block; self.encoder_blocks]
        } else {
            self.block_kernels.clone()
        }
    }

    /// Output channels of every decoder block; the last is the signal width.
    pub fn decoder_kernels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = if self.block_kernels.is_empty() {
            vec![self.kernels_per_block; self.decoder_blocks - 1]
        } else {
            self.block_kernels[..self.decoder_blocks - 1]
                .iter()
                .rev()
                .copied()
                .collect()
        };
        out.push(self.channels);
        out
    }

    /// Time length after each encoder block, starting with the input length.
    pub fn encoder_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.time_steps];
        for i in 0..self.encoder_blocks {
            let last = *lens.last().unwrap();
            lens.push(conv_out_len(last, self.kernel_width, self.stride(i), Padding::Same).unwrap_or(0));
        }
        lens
    }

    pub fn stride(&self, encoder_block: usize) -> usize {
        if encoder_block < self.downsample_blocks {
            2
        } else {
            1
        }
    }

    pub fn bottleneck_len(&self) -> usize {
        self.encoder_lengths()[self.encoder_blocks]
    }

    /// Channels of the tensor the decoder reshapes its dense output into.
    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_kernels().last().unwrap_or(&self.kernels_per_block)
    }

    pub fn flat_len(&self) -> usize {
        self.bottleneck_len() * self.bottleneck_channels()
    }

    /// Target length of decoder block `i` if it upsamples.
    pub fn decoder_target_len(&self, i: usize) -> Option<usize> {
        let first_up = self.decoder_blocks - self.downsample_blocks;
        if i < first_up {
            return None;
        }
        let k = i - first_up;
        Some(self.encoder_lengths()[self.downsample_blocks - 1 - k])
    }

    /// Time length after each decoder block, starting from the bottleneck.
    pub fn decoder_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.bottleneck_len()];
        for i in 0..self.decoder_blocks {
            let next = self.decoder_target_len(i).unwrap_or(*lens.last().unwrap());
            lens.push(next);
        }
        lens
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(m));
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return bad("encoder and decoder need at least one conv block".into());
        }
        if self.kernel_width == 0 || self.kernel_width.is_multiple_of(2) {
            return bad(format!("kernel width {} must be odd and positive", self.kernel_width));
        }
        for (name, v) in [
            ("kernels_per_block", self.kernels_per_block),
            ("dense_units", self.dense_units),
            ("latent_dim", self.latent_dim),
            ("time_steps", self.time_steps),
            ("channels", self.channels),
            ("module_count", self.module_count),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.block_kernels.is_empty() {
            if self.block_kernels.len() != self.encoder_blocks
                || self.encoder_blocks != self.decoder_blocks
            {
                return bad(format!(
                    "block_kernels has {} entries for {}/{} blocks",
                    self.block_kernels.len(),
                    self.encoder_blocks,
                    self.decoder_blocks
                ));
            }
            if self.block_kernels.contains(&0) {
                return bad("block_kernels entries must be positive".into());
            }
        }
        if self.downsample_blocks > self.encoder_blocks.min(self.decoder_blocks) {
            return bad(format!(
                "{} downsampling blocks exceed the {}/{} conv blocks",
                self.downsample_blocks, self.encoder_blocks, self.decoder_blocks
            ));
        }
        let lens = self.encoder_lengths();
        if lens.iter().any(|&l| l < self.kernel_width) {
            return bad(format!(
                "downsampling {} steps {} times exhausts the time axis ({lens:?})",
                self.time_steps, self.downsample_blocks
            ));
        }
        // decode(encode(x)) must come back with the input's dims
        let dec = self.decoder_lengths();
        if *dec.last().unwrap() != self.time_steps || *self.decoder_kernels().last().unwrap() != self.channels {
            return bad(format!(
                "decoder produces {} x {} for {} x {} inputs",
                dec.last().unwrap(),
                self.decoder_kernels().last().unwrap(),
                self.time_steps,
                self.channels
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("model.mode".into(), self.mode.as_str().into());
        for (k, v) in [
            ("model.encoder_blocks", self.encoder_blocks),
            ("model.decoder_blocks", self.decoder_blocks),
            ("model.kernels_per_block", self.kernels_per_block),
            ("model.kernel_width", self.kernel_width),
            ("model.downsample_blocks", self.downsample_blocks),
            ("model.dense_units", self.dense_units),
            ("model.latent_dim", self.latent_dim),
            ("model.module_count", self.module_count),
            ("model.time_steps", self.time_steps),
            ("model.channels", self.channels),
        ] {
            kv.insert(k.into(), v.to_string());
        }
        let bk: Vec<String> = self.block_kernels.iter().map(usize::to_string).collect();
        kv.insert("model.block_kernels".into(), bk.join(","));
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad integer for {k}")))
        };
        let block_kernels = match kv.get("model.block_kernels") {
            Some(s) if !s.is_empty() => s
                .split(',')
                .map(|p| p.parse().map_err(|_| Error::Format("bad block_kernels".into())))
                .collect::<Result<Vec<usize>>>()?,
            _ => Vec::new(),
        };
        let spec = Self {
            mode: ModelMode::parse(get("model.mode")?)?,
            encoder_blocks: num("model.encoder_blocks")?,
            decoder_blocks: num("model.decoder_blocks")?,
            kernels_per_block: num("model.kernels_per_block")?,
            block_kernels,
            kernel_width: num("model.kernel_width")?,
            downsample_blocks: num("model.downsample_blocks")?,
            dense_units: num("model.dense_units")?,
            latent_dim: num("model.latent_dim")?,
            module_count: num("model.module_count")?,
            time_steps: num("model.time_steps")?,
            channels: num("model.channels")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
