//! Two miniature cross-architectural segmentation networks.
//!
//! Both share a two-stage encoder/decoder skeleton with skip concatenation
//! (spatial factor 4 between input and bottleneck); the residual variant adds
//! an additive residual block at every scale. 3x3 kernels throughout, no
//! normalization layers, so students and their EMA teachers run identically.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchitectureKind {
    PlainConvNet,
    ResidualConvNet,
}

impl ArchitectureKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArchitectureKind::PlainConvNet => "PlainConvNet",
            ArchitectureKind::ResidualConvNet => "ResidualConvNet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "PlainConvNet" => Ok(ArchitectureKind::PlainConvNet),
            "ResidualConvNet" => Ok(ArchitectureKind::ResidualConvNet),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, named parameter set. Names and shapes are a pure function of
/// (architecture, num_classes, base_channels), which is what makes two sets
/// of the same configuration blendable by the EMA update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchitectureKind,
    num_classes: usize,
    base_channels: usize,
    entries: Vec<ParamEntry>,
}

/// (name, [Cout, Cin, kh, kw]) conv layers of an architecture, in forward
/// order. Each conv also owns a bias of length Cout.
fn conv_layout(arch: ArchitectureKind, k: usize, c: usize) -> Vec<(&'static str, [usize; 4])> {
    match arch {
        ArchitectureKind::PlainConvNet => vec![
            ("enc1", [c, 1, 3, 3]),
            ("enc2", [2 * c, c, 3, 3]),
            ("bottleneck", [4 * c, 2 * c, 3, 3]),
            ("dec2", [2 * c, 6 * c, 3, 3]),
            ("dec1", [c, 3 * c, 3, 3]),
            ("head", [k, c, 1, 1]),
        ],
        ArchitectureKind::ResidualConvNet => vec![
            ("stem", [c, 1, 3, 3]),
            ("res1", [c, c, 3, 3]),
            ("enc2", [2 * c, c, 3, 3]),
            ("res2", [2 * c, 2 * c, 3, 3]),
            ("bottleneck", [4 * c, 2 * c, 3, 3]),
            ("res3", [4 * c, 4 * c, 3, 3]),
            ("dec2", [2 * c, 6 * c, 3, 3]),
            ("dec1", [c, 3 * c, 3, 3]),
            ("head", [k, c, 1, 1]),
        ],
    }
}

impl ModelParams {
    /// Deterministic initialization: kernels from a fan-in-scaled uniform
    /// distribution U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero.
    pub fn init(
        arch: ArchitectureKind,
        num_classes: usize,
        base_channels: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if base_channels < 4 {
            return Err(Error::Config(format!(
                "need at least 4 base channels, got {base_channels}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for (name, [co, ci, kh, kw]) in conv_layout(arch, num_classes, base_channels) {
            let fan_in = (ci * kh * kw) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let weight: Vec<f64> = (0..co * ci * kh * kw)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            entries.push(ParamEntry {
                name: format!("{name}.weight"),
                shape: vec![co, ci, kh, kw],
                data: weight,
            });
            entries.push(ParamEntry {
                name: format!("{name}.bias"),
                shape: vec![co],
                data: vec![0.0; co],
            });
        }
        Ok(ModelParams {
            arch,
            num_classes,
            base_channels,
            entries,
        })
    }

    pub fn arch(&self) -> ArchitectureKind {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn num_parameters(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn structurally_compatible(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.num_classes == other.num_classes
            && self.base_channels == other.base_channels
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Leaf every parameter onto `tape`. Trainable bindings request
    /// gradients; teacher bindings never do.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Result<BoundModel> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        let mut names = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            tensors.push(tape.leaf(&e.shape, e.data.clone(), trainable)?);
            names.push(e.name.clone());
        }
        Ok(BoundModel {
            arch: self.arch,
            names,
            tensors,
        })
    }

    /// Inference without gradient tracking on a scratch tape; returns raw
    /// logits data for a [B,1,H,W] image buffer.
    pub fn forward_inference(&self, images: &[f64], batch: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let input = tape.constant(&[batch, 1, h, w], images.to_vec())?;
        let bound = self.bind(&tape, false)?;
        let logits = bound.forward(&input)?;
        Ok(logits.data())
    }

    /// Write the checkpoint: a text header naming the architecture and every
    /// tensor, then `data` followed by raw little-endian f64 blocks in header
    /// order. Layout is documented in docs/formats.md.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "dtsl-checkpoint v1")?;
        writeln!(out, "arch {}", self.arch.name())?;
        writeln!(out, "classes {}", self.num_classes)?;
        writeln!(out, "base_channels {}", self.base_channels)?;
        writeln!(out, "tensors {}", self.entries.len())?;
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            writeln!(out, "tensor {} {}", e.name, dims.join(" "))?;
        }
        writeln!(out, "data")?;
        for e in &self.entries {
            for v in &e.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();

        let mut read_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of header".to_string()));
            }
            Ok(line.trim_end().to_string())
        };

        if read_line(&mut reader)? != "dtsl-checkpoint v1" {
            return Err(Error::Checkpoint("bad magic line".to_string()));
        }
        let parse_kv = |l: &str, key: &str| -> Result<String> {
            l.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Checkpoint(format!("expected '{key} ...', got '{l}'")))
        };
        let arch = ArchitectureKind::parse(&parse_kv(&read_line(&mut reader)?, "arch")?)?;
        let classes: usize = parse_kv(&read_line(&mut reader)?, "classes")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad class count".to_string()))?;
        let channels: usize = parse_kv(&read_line(&mut reader)?, "base_channels")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad channel count".to_string()))?;
        let count: usize = parse_kv(&read_line(&mut reader)?, "tensors")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad tensor count".to_string()))?;

        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let l = read_line(&mut reader)?;
            let mut parts = l.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(Error::Checkpoint(format!("expected tensor line, got '{l}'")));
            }
            let name = parts
                .next()
                .ok_or_else(|| Error::Checkpoint("tensor line missing name".to_string()))?
                .to_string();
            let shape: Vec<usize> = parts
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Checkpoint(format!("bad dimension '{p}'")))
                })
                .collect::<Result<_>>()?;
            headers.push((name, shape));
        }
        if read_line(&mut reader)? != "data" {
            return Err(Error::Checkpoint("missing data marker".to_string()));
        }

        // the layout must match what this build would construct
        let expected = conv_layout(arch, classes, channels);
        if headers.len() != expected.len() * 2 {
            return Err(Error::Checkpoint(format!(
                "tensor count {} does not match architecture layout",
                headers.len()
            )));
        }

        let mut entries = Vec::with_capacity(headers.len());
        for (name, shape) in headers {
            let numel: usize = shape.iter().product();
            let mut buf = vec![0u8; numel * 8];
            reader.read_exact(&mut buf)?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push(ParamEntry { name, shape, data });
        }

        let loaded = ModelParams {
            arch,
            num_classes: classes,
            base_channels: channels,
            entries,
        };
        let template = ModelParams::init(arch, classes, channels, 0)
            .map_err(|e| Error::Checkpoint(format!("invalid configuration: {e}")))?;
        if !loaded.structurally_compatible(&template) {
            return Err(Error::Checkpoint(
                "tensor names/shapes do not match the declared architecture".to_string(),
            ));
        }
        Ok(loaded)
    }
}

/// Negative-side slope of the activation. Without normalization layers a
/// narrow all-ReLU net can go entirely dead; the leaky branch keeps
/// gradients alive.
const LEAKY_SLOPE: f64 = 0.1;

/// leaky(x) = relu(x) - slope * relu(-x), composed from primitive ops.
fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    let neg_part = x.neg().relu().mul_scalar(LEAKY_SLOPE);
    x.relu().sub(&neg_part).map_err(Error::from)
}

/// Parameters leafed onto one tape, ready for forward passes.
pub struct BoundModel {
    arch: ArchitectureKind,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl BoundModel {
    fn get(&self, name: &str) -> (&Tensor, &Tensor) {
        let wi = self
            .names
            .iter()
            .position(|n| n.strip_suffix(".weight") == Some(name))
            .unwrap_or_else(|| panic!("unknown layer '{name}'"));
        (&self.tensors[wi], &self.tensors[wi + 1])
    }

    fn conv_block(&self, x: &Tensor, name: &str, pad: usize) -> Result<Tensor> {
        let (w, b) = self.get(name);
        Ok(x.conv2d(w, 1, pad)?.add_channel_bias(b)?)
    }

    /// leaky(x + conv(x)), the additive residual block.
    fn residual_block(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let y = self.conv_block(x, name, 1)?;
        leaky_relu(&x.add(&y)?)
    }

    /// Segmentation logits [B,K,H,W] for images [B,1,H,W]; H and W must be
    /// divisible by 4 (two pooling stages).
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::Shape(format!(
                "forward expects [B,1,H,W] images, got {shape:?}"
            )));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::Shape(format!(
                "image size {}x{} not divisible by 4",
                shape[2], shape[3]
            )));
        }
        match self.arch {
            ArchitectureKind::PlainConvNet => self.forward_plain(images),
            ArchitectureKind::ResidualConvNet => self.forward_residual(images),
        }
    }

    fn conv_act(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        leaky_relu(&self.conv_block(x, name, 1)?)
    }

    fn forward_plain(&self, images: &Tensor) -> Result<Tensor> {
        let e1 = self.conv_act(images, "enc1")?;
        let e2 = self.conv_act(&e1.maxpool2()?, "enc2")?;
        let bt = self.conv_act(&e2.maxpool2()?, "bottleneck")?;
        let d2 = self.conv_act(&bt.upsample_nearest2()?.concat_channels(&e2)?, "dec2")?;
        let d1 = self.conv_act(&d2.upsample_nearest2()?.concat_channels(&e1)?, "dec1")?;
        self.conv_block(&d1, "head", 0)
    }

    fn forward_residual(&self, images: &Tensor) -> Result<Tensor> {
        let s = self.conv_act(images, "stem")?;
        let r1 = self.residual_block(&s, "res1")?;
        let e2 = self.conv_act(&r1.maxpool2()?, "enc2")?;
        let r2 = self.residual_block(&e2, "res2")?;
        let bt = self.conv_act(&r2.maxpool2()?, "bottleneck")?;
        let r3 = self.residual_block(&bt, "res3")?;
        let d2 = self.conv_act(&r3.upsample_nearest2()?.concat_channels(&r2)?, "dec2")?;
        let d1 = self.conv_act(&d2.upsample_nearest2()?.concat_channels(&r1)?, "dec1")?;
        self.conv_block(&d1, "head", 0)
    }

    /// Per-entry gradients after backward, zeros where no gradient flowed.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}
