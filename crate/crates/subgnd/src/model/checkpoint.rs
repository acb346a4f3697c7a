//! Parameter checkpoints.
//!
//! Layout: a text header (`SUBGND-CKPT 1`, the config fields one per line
//! in fixed order, `end-header`), then per tensor a line `tensor NAME LEN`
//! followed by LEN little-endian f64 values and a newline. Tensors appear
//! in [`ModelParams::visit`] order. Raw bits round-trip exactly.

use super::{ModelConfig, ModelParams, ModelVariant};
use crate::autodiff::PoolMode;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
    #[error("checkpoint config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const MAGIC: &str = "SUBGND-CKPT 1";

pub fn write_checkpoint_bytes(config: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    let header = format!(
        "{MAGIC}\nvariant {}\ninput_dim {}\nhidden {}\nnum_layers {}\neps {}\nalter_pool {}\ndropout {}\nnum_classes {}\nmlp_depth {}\nend-header\n",
        config.variant,
        config.input_dim,
        config.hidden,
        config.num_layers,
        config.eps,
        config.alter_pool,
        config.dropout,
        config.num_classes,
        config.mlp_depth,
    );
    out.extend_from_slice(header.as_bytes());
    for (name, data) in params.visit() {
        out.extend_from_slice(format!("tensor {name} {}\n", data.len()).as_bytes());
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(b'\n');
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint_bytes(config, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    parse_checkpoint(&std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed { offset: self.pos, msg: msg.into() }
    }

    fn line(&mut self) -> Result<&'a str, CheckpointError> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("unexpected end of file (missing newline)"))?;
        self.pos = start + end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| CheckpointError::Malformed {
            offset: start,
            msg: "non-UTF-8 header line".into(),
        })
    }

    fn raw(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("expected {n} more bytes")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn field<'a>(cur: &mut Cursor<'a>, key: &str) -> Result<&'a str, CheckpointError> {
    let line = cur.line()?;
    match line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(cur.err(format!("expected `{key} <value>`, found {line:?}"))),
    }
}

fn parse_field<T: std::str::FromStr>(
    cur: &mut Cursor<'_>,
    key: &str,
) -> Result<T, CheckpointError> {
    let v = field(cur, key)?;
    v.parse().map_err(|_| cur.err(format!("bad value for {key}: {v:?}")))
}

/// Parses checkpoint bytes back into the config echo and parameters.
/// Structure (tensor names, order, and lengths) is validated against what
/// the parsed config dictates; never panics on malformed input.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.line()?;
    if magic != MAGIC {
        return Err(CheckpointError::Malformed { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let config = ModelConfig {
        variant: parse_field::<ModelVariant>(&mut cur, "variant")?,
        input_dim: parse_field(&mut cur, "input_dim")?,
        hidden: parse_field(&mut cur, "hidden")?,
        num_layers: parse_field(&mut cur, "num_layers")?,
        eps: parse_field(&mut cur, "eps")?,
        alter_pool: parse_field::<PoolMode>(&mut cur, "alter_pool")?,
        dropout: parse_field(&mut cur, "dropout")?,
        num_classes: parse_field(&mut cur, "num_classes")?,
        mlp_depth: parse_field(&mut cur, "mlp_depth")?,
    };
    config.validate().map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let end = cur.line()?;
    if end != "end-header" {
        return Err(cur.err(format!("expected `end-header`, found {end:?}")));
    }

    let mut params = super::zeroed_params(&config);
    for (name, data) in params.visit_mut() {
        let head = cur.line()?;
        let want = format!("tensor {name} {}", data.len());
        if head != want {
            return Err(cur.err(format!("expected {want:?}, found {head:?}")));
        }
        let n_bytes = data
            .len()
            .checked_mul(8)
            .ok_or_else(|| cur.err("tensor length overflows".to_string()))?;
        let raw = cur.raw(n_bytes)?;
        for (x, chunk) in data.iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        let sep = cur.raw(1)?;
        if sep != b"\n" {
            return Err(cur.err("missing newline after tensor data"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes after last tensor"));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> (ModelConfig, ModelParams) {
        let mut cfg = ModelConfig::new(5, 4, 3);
        cfg.eps = -1.0;
        cfg.dropout = 0.35;
        cfg.alter_pool = PoolMode::Mean;
        let params = init_params(&cfg, 9).unwrap();
        (cfg, params)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cfg, mut params) = sample();
        // Awkward values must survive bit-for-bit.
        params.proj.w[0] = 0.1 + 0.2;
        params.proj.w[1] = -0.0;
        params.proj.w[2] = 1e-308;
        let bytes = write_checkpoint_bytes(&cfg, &params);
        let (cfg2, params2) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
        assert!(params2.proj.w[1].is_sign_negative());
        assert_eq!(write_checkpoint_bytes(&cfg2, &params2), bytes);
    }

    #[test]
    fn round_trip_through_file() {
        let (cfg, params) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!((cfg, params), (cfg2, params2));
    }

    #[test]
    fn base_variant_round_trips_without_logits() {
        let mut cfg = ModelConfig::new(3, 4, 2);
        cfg.variant = ModelVariant::Base;
        let params = init_params(&cfg, 2).unwrap();
        let (cfg2, params2) = parse_checkpoint(&write_checkpoint_bytes(&cfg, &params)).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
        assert!(params2.scaling_logits.is_empty());
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(
            parse_checkpoint(b"NOT-A-CKPT\n"),
            Err(CheckpointError::Malformed { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_rejected_everywhere() {
        let (cfg, params) = sample();
        let bytes = write_checkpoint_bytes(&cfg, &params);
        // Any strict prefix must fail cleanly, never panic.
        for cut in (0..bytes.len()).step_by(17) {
            assert!(parse_checkpoint(&bytes[..cut]).is_err(), "prefix of {cut} parsed");
        }
    }

    #[test]
    fn tensor_name_mismatch_rejected() {
        let (cfg, params) = sample();
        let bytes = write_checkpoint_bytes(&cfg, &params);
        let text_end = bytes.windows(7).position(|w| w == b"proj.w ").unwrap();
        let mut bad = bytes.clone();
        bad[text_end] = b'q';
        let err = parse_checkpoint(&bad).unwrap_err();
        assert!(err.to_string().contains("expected"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let (cfg, params) = sample();
        let mut bytes = write_checkpoint_bytes(&cfg, &params);
        bytes.push(b'x');
        assert!(matches!(parse_checkpoint(&bytes), Err(CheckpointError::Malformed { .. })));
    }

    #[test]
    fn invalid_config_echo_rejected() {
        let (cfg, params) = sample();
        let bytes = write_checkpoint_bytes(&cfg, &params);
        let text = String::from_utf8_lossy(&bytes[..200]).into_owned();
        assert!(text.contains("hidden 4"));
        let bad: Vec<u8> = {
            let mut v = bytes.clone();
            let at = v.windows(8).position(|w| w == b"hidden 4").unwrap();
            v[at + 7] = b'0';
            v
        };
        assert!(matches!(parse_checkpoint(&bad), Err(CheckpointError::BadConfig(_))));
    }
}
