//! Flat parameter storage with a named layer index, uniform initialisation
//! and the on-disk params format (length-prefixed JSON header followed by
//! little-endian f64 values).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Branch, HeadConfig};
use crate::error::{Error, Result};

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayerSlice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Indices into `HeadParams::layers` for the weight tensor of each layer;
/// the matching bias always sits at the next index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerIds {
    pub box_deconv: usize,
    pub box_conv: [usize; 3],
    pub class_fc: [usize; 3],
    /// Indexed by canonical branch order (visible, amodal, occlusion).
    pub branch: [BranchIds; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BranchIds {
    pub fuse: [usize; 3],
    pub feat: [usize; 3],
    pub pred: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub values: Vec<f64>,
    pub layers: Vec<LayerSlice>,
    pub(crate) ids: LayerIds,
}

struct Builder {
    layers: Vec<LayerSlice>,
    /// (fan_in, fan_out) per weight tensor, zero for biases.
    fans: Vec<(usize, usize)>,
    next: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, fans: (usize, usize)) {
        let len: usize = shape.iter().product();
        self.layers.push(LayerSlice {
            name,
            offset: self.next,
            shape,
        });
        self.fans.push(fans);
        self.next += len;
    }

    /// conv weights `[out][in][3][3]`
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) -> usize {
        let id = self.layers.len();
        self.push(format!("{name}.weight"), vec![c_out, c_in, 3, 3], (c_in * 9, c_out * 9));
        self.push(format!("{name}.bias"), vec![c_out], (0, 0));
        id
    }

    /// transposed conv weights `[in][out][k][k]`
    fn deconv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> usize {
        let id = self.layers.len();
        self.push(format!("{name}.weight"), vec![c_in, c_out, k, k], (c_in * k * k, c_out * k * k));
        self.push(format!("{name}.bias"), vec![c_out], (0, 0));
        id
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> usize {
        let id = self.layers.len();
        self.push(format!("{name}.weight"), vec![n_out, n_in], (n_in, n_out));
        self.push(format!("{name}.bias"), vec![n_out], (0, 0));
        id
    }
}

fn layout(cfg: &HeadConfig) -> (Vec<LayerSlice>, Vec<(usize, usize)>, LayerIds, usize) {
    let q = cfg.channels;
    let mut b = Builder {
        layers: Vec::new(),
        fans: Vec::new(),
        next: 0,
    };
    let box_deconv = b.deconv("box.deconv", q, q, 3);
    let box_conv = [1, 2, 3].map(|i| b.conv(&format!("box.conv{i}"), q, q));
    let flat = cfg.roi_size * cfg.roi_size * q;
    let h = cfg.fc_hidden;
    let class_fc = [
        b.linear("class.fc1", flat, h),
        b.linear("class.fc2", h, h),
        b.linear("class.fc3", h, 1),
    ];
    let branch = Branch::ALL.map(|br| {
        let p = cfg.concat_channels(br);
        let pre = br.prefix();
        let fuse = [
            b.conv(&format!("{pre}.fuse1"), p, q),
            b.conv(&format!("{pre}.fuse2"), q, q),
            b.conv(&format!("{pre}.fuse3"), q, q),
        ];
        let feat = [1, 2, 3].map(|i| b.conv(&format!("{pre}.feat{i}"), q, q));
        let pred = match br {
            Branch::Occlusion => b.linear(&format!("{pre}.pred"), q, 1),
            _ => b.deconv(&format!("{pre}.pred"), q, 1, 2),
        };
        BranchIds { fuse, feat, pred }
    });
    let ids = LayerIds {
        box_deconv,
        box_conv,
        class_fc,
        branch,
    };
    let total = b.next;
    (b.layers, b.fans, ids, total)
}

impl HeadParams {
    /// All-zero parameters in the layout for `cfg`.
    pub fn zeros(cfg: &HeadConfig) -> Self {
        let (layers, _, ids, total) = layout(cfg);
        HeadParams {
            values: vec![0.0; total],
            layers,
            ids,
        }
    }

    /// Uniform weights per `cfg.init`, zero biases, drawn in layout order from `cfg.seed`.
    pub fn init(cfg: &HeadConfig) -> Self {
        let (layers, fans, ids, total) = layout(cfg);
        let mut values = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (layer, &(fan_in, fan_out)) in layers.iter().zip(&fans) {
            if fan_in == 0 {
                continue;
            }
            let a = cfg.init.bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            for v in &mut values[layer.range()] {
                *v = dist.sample(&mut rng);
            }
        }
        HeadParams { values, layers, ids }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSlice> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layer(name).map(|l| &self.values[l.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layer(name)?.range();
        Some(&mut self.values[r])
    }

    /// Weight and bias of the layer whose weight tensor has index `id`.
    pub(crate) fn wb(&self, id: usize) -> (&[f64], &[f64]) {
        (&self.values[self.layers[id].range()], &self.values[self.layers[id + 1].range()])
    }

    /// Does this parameter set match the layout `cfg` would produce?
    pub fn matches(&self, cfg: &HeadConfig) -> bool {
        let (layers, _, _, total) = layout(cfg);
        layers == self.layers && total == self.values.len()
    }

    pub fn check_layout(&self, cfg: &HeadConfig) -> Result<()> {
        if self.matches(cfg) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter layout ({} values) does not match head config (Q={}, hierarchy {})",
                self.values.len(),
                cfg.channels,
                cfg.hierarchy
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weight and bias gradient slices for layer `id` inside a flat gradient vector.
pub(crate) fn wb_mut<'a>(layers: &[LayerSlice], grad: &'a mut [f64], id: usize) -> (&'a mut [f64], &'a mut [f64]) {
    let w = layers[id].range();
    let b = layers[id + 1].range();
    debug_assert_eq!(w.end, b.start);
    let (lo, hi) = grad[w.start..b.end].split_at_mut(w.len());
    (lo, hi)
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: HeadConfig,
    layers: Vec<LayerSlice>,
}

/// Writes `params` as an 8-byte little-endian header length, the JSON header
/// (config plus layer index), then every value as a little-endian f64.
pub fn write_params(path: &Path, params: &HeadParams, cfg: &HeadConfig) -> Result<()> {
    params.check_layout(cfg)?;
    let header = serde_json::to_vec(&FileHeader {
        config: cfg.clone(),
        layers: params.layers.clone(),
    })?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &params.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<(HeadParams, HeadConfig)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf).map_err(|e| Error::io(path, e))?;
    let hlen = u64::from_le_bytes(len_buf) as usize;
    if hlen > 64 << 20 {
        return Err(Error::format(path, format!("header length {hlen} is implausible")));
    }
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let header: FileHeader =
        serde_json::from_slice(&header).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    header.config.validate()?;
    let mut params = HeadParams::zeros(&header.config);
    if params.layers != header.layers {
        return Err(Error::format(path, "layer index does not match the stored config"));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != params.values.len() * 8 {
        return Err(Error::format(
            path,
            format!("expected {} parameter bytes, found {}", params.values.len() * 8, body.len()),
        ));
    }
    for (v, chunk) in params.values.iter_mut().zip(body.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters in {}", path.display())));
    }
    Ok((params, header.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::{Hierarchy, InitScheme};

    #[test]
    fn layout_is_contiguous_and_deterministic() {
        let cfg = HeadConfig::default();
        let a = HeadParams::init(&cfg);
        let b = HeadParams::init(&cfg);
        assert_eq!(a, b);
        let mut next = 0;
        for l in &a.layers {
            assert_eq!(l.offset, next);
            next += l.len();
        }
        assert_eq!(next, a.len());
        assert!(a.slice("visible.fuse1.weight").is_some());
        assert!(a.slice("occlusion.pred.bias").unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(a.layer("amodal.fuse1.weight").unwrap().shape, vec![8, 24, 3, 3]);
    }

    #[test]
    fn init_bounds_respected() {
        // box.conv1 is 8 -> 8 channels, 3x3: fan_in = fan_out = 72
        for (init, a) in [(InitScheme::He, (6.0f64 / 72.0).sqrt()), (InitScheme::Glorot, (6.0f64 / 144.0).sqrt())] {
            let cfg = HeadConfig {
                init,
                ..Default::default()
            };
            let p = HeadParams::init(&cfg);
            let w = p.slice("box.conv1.weight").unwrap();
            assert!(w.iter().all(|v| v.abs() <= a));
            // a uniform draw of 576 values reaches past 90% of the bound
            assert!(w.iter().any(|v| v.abs() > 0.9 * a));
            assert!(p.slice("box.conv1.bias").unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn layout_changes_with_hierarchy_only_under_prior_fusion() {
        let cfg = HeadConfig::default();
        let other = HeadConfig {
            hierarchy: Hierarchy::OAV,
            ..cfg.clone()
        };
        assert!(!HeadParams::zeros(&cfg).matches(&other));
        let off = HeadConfig {
            fuse_prior: false,
            ..cfg
        };
        let off_other = HeadConfig {
            hierarchy: Hierarchy::OAV,
            ..off.clone()
        };
        assert!(HeadParams::zeros(&off).matches(&off_other));
    }

    #[test]
    fn params_file_roundtrip() {
        let cfg = HeadConfig {
            channels: 2,
            roi_size: 2,
            fc_hidden: 3,
            init: Default::default(),
            ..HeadConfig::default()
        };
        let p = HeadParams::init(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        write_params(&path, &p, &cfg).unwrap();
        let (q, c) = read_params(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(c, cfg);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_params(&path).is_err());
    }
}
