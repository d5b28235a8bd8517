//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SAUGCKPT"
//! version      u32      currently 1
//! meta_len     u32      followed by UTF-8 `key=value` lines
//! net_count    u32
//! per network:
//!   name_len     u32    followed by UTF-8 name
//!   manifest_len u32    followed by UTF-8 manifest (see below)
//!   value_count  u64    followed by that many f32 values, manifest order
//! ```
//!
//! A manifest is line oriented:
//!
//! ```text
//! input 3 32 32
//! taps 1 4
//! layer conv in=3 out=16 k=3 stride=1 pad=1 mode=reflect
//! layer relu
//! param 16 3 3 3
//! param 16
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::{LayerSpec, PadMode};
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SAUGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    meta: Vec<(String, String)>,
    networks: Vec<(String, Network)>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses a metadata value, failing if it is missing or malformed.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| ckpt_err(format!("missing metadata `{key}`")))?;
        raw.parse()
            .map_err(|_| ckpt_err(format!("malformed metadata `{key}` = `{raw}`")))
    }

    pub fn add_network(&mut self, name: &str, net: Network) {
        self.networks.push((name.to_string(), net));
    }

    pub fn network(&self, name: &str) -> Option<&Network> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
    }

    pub fn take_network(&mut self, name: &str) -> Result<Network> {
        let pos = self
            .networks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| ckpt_err(format!("no network named `{name}`")))?;
        Ok(self.networks.remove(pos).1)
    }

    pub fn network_names(&self) -> impl Iterator<Item = &str> {
        self.networks.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(ckpt_err(format!("unencodable metadata `{k}`")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        write_block(&mut w, meta.as_bytes())?;
        w.write_all(&(self.networks.len() as u32).to_le_bytes())?;
        for (name, net) in &self.networks {
            write_block(&mut w, name.as_bytes())?;
            write_block(&mut w, manifest(net).as_bytes())?;
            let count: u64 = net.params().iter().map(|p| p.len() as u64).sum();
            w.write_all(&count.to_le_bytes())?;
            for p in net.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ckpt_err("bad magic; not a checkpoint file"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported format version {version}")));
        }
        let mut ckpt = Checkpoint::new();
        for line in read_text(&mut r)?.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ckpt_err(format!("bad metadata line `{line}`")))?;
            ckpt.meta.push((k.to_string(), v.to_string()));
        }
        let count = read_u32(&mut r)?;
        for _ in 0..count {
            let name = read_text(&mut r)?;
            let parsed = parse_manifest(&read_text(&mut r)?)?;
            let mut values = [0u8; 8];
            r.read_exact(&mut values)?;
            let total = u64::from_le_bytes(values);
            let expected: u64 = parsed.param_shapes.iter().map(|s| s.iter().product::<usize>() as u64).sum();
            if total != expected {
                return Err(ckpt_err(format!(
                    "network `{name}`: manifest describes {expected} values, header says {total}"
                )));
            }
            let mut params = Vec::with_capacity(parsed.param_shapes.len());
            for shape in parsed.param_shapes {
                let n: usize = shape.iter().product();
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                let data = buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                params.push(Tensor::new(shape, data)?);
            }
            let net = Network::from_parts(&parsed.input, parsed.layers, parsed.taps, params)
                .map_err(|e| ckpt_err(format!("network `{name}`: {e}")))?;
            ckpt.networks.push((name, net));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_block<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_text<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(ckpt_err(format!("text block of {len} bytes is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ckpt_err("text block is not UTF-8"))
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Renders the layer manifest of a network.
pub fn manifest(net: &Network) -> String {
    let mut out = format!("input {}\n", join(net.input_shape()));
    out.push_str(&format!("taps {}\n", join(net.taps())).trim_end().to_string());
    out.push('\n');
    for layer in net.layers() {
        let line = match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                pad_mode,
            } => format!(
                "layer conv in={in_channels} out={out_channels} k={kernel} stride={stride} pad={padding} mode={}",
                pad_mode.as_str()
            ),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => format!("layer linear in={in_features} out={out_features}"),
            LayerSpec::Relu => "layer relu".to_string(),
            LayerSpec::Sigmoid => "layer sigmoid".to_string(),
            LayerSpec::MaxPool2d { size } => format!("layer maxpool size={size}"),
            LayerSpec::Upsample { scale } => format!("layer upsample scale={scale}"),
            LayerSpec::Flatten => "layer flatten".to_string(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    for p in net.params() {
        out.push_str(&format!("param {}\n", join(p.shape())));
    }
    out
}

struct ParsedManifest {
    input: Vec<usize>,
    taps: Vec<usize>,
    layers: Vec<LayerSpec>,
    param_shapes: Vec<Vec<usize>>,
}

fn parse_dims<'a>(it: impl Iterator<Item = &'a str>) -> Result<Vec<usize>> {
    it.map(|t| t.parse().map_err(|_| ckpt_err(format!("bad dimension `{t}`"))))
        .collect()
}

fn parse_manifest(text: &str) -> Result<ParsedManifest> {
    let mut parsed = ParsedManifest {
        input: Vec::new(),
        taps: Vec::new(),
        layers: Vec::new(),
        param_shapes: Vec::new(),
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("input") => parsed.input = parse_dims(tokens)?,
            Some("taps") => parsed.taps = parse_dims(tokens)?,
            Some("param") => parsed.param_shapes.push(parse_dims(tokens)?),
            Some("layer") => parsed.layers.push(parse_layer(line, tokens)?),
            _ => return Err(ckpt_err(format!("unknown manifest line `{line}`"))),
        }
    }
    Ok(parsed)
}

fn parse_layer<'a>(line: &str, mut tokens: impl Iterator<Item = &'a str>) -> Result<LayerSpec> {
    let kind = tokens.next().ok_or_else(|| ckpt_err("layer line without kind"))?;
    let kv: Vec<(&str, &str)> = tokens.filter_map(|t| t.split_once('=')).collect();
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| ckpt_err(format!("`{line}`: missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        let raw = get(key)?;
        raw.parse()
            .map_err(|_| ckpt_err(format!("`{line}`: bad value `{raw}` for `{key}`")))
    };
    Ok(match kind {
        "conv" => LayerSpec::Conv2d {
            in_channels: num("in")?,
            out_channels: num("out")?,
            kernel: num("k")?,
            stride: num("stride")?,
            padding: num("pad")?,
            pad_mode: PadMode::parse(get("mode")?)
                .ok_or_else(|| ckpt_err(format!("`{line}`: unknown padding mode")))?,
        },
        "linear" => LayerSpec::Linear {
            in_features: num("in")?,
            out_features: num("out")?,
        },
        "relu" => LayerSpec::Relu,
        "sigmoid" => LayerSpec::Sigmoid,
        "maxpool" => LayerSpec::MaxPool2d { size: num("size")? },
        "upsample" => LayerSpec::Upsample { scale: num("scale")? },
        "flatten" => LayerSpec::Flatten,
        other => return Err(ckpt_err(format!("unknown layer kind `{other}`"))),
    })
}
