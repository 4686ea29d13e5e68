//! Plain-text checkpoints.
//!
//! ```text
//! GIPLAB-CKPT v1
//! dataset=synth-2M data_seed=0 seed=0 ...
//! encoder.w0 17 64
//! <17 lines of 64 floats>
//! ...
//! ```
//!
//! Floats carry 17 significant digits, which round-trips every `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::TrainConfig;
use crate::encoder::{EncoderParams, LayerParams};
use crate::error::{GipError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::ModelState;

pub const MAGIC: &str = "GIPLAB-CKPT";
pub const VERSION: &str = "v1";

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_checkpoint<F: Scalar>(state: &ModelState<F>, config: &TrainConfig) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n{}\n", config.to_line());
    for (name, t) in state.named() {
        out.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|v| format_float(v.as_f64())).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_checkpoint<F: Scalar>(path: &Path, state: &ModelState<F>, config: &TrainConfig) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(render_checkpoint(state, config).as_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(ModelState<F>, TrainConfig)> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

pub fn parse_checkpoint<F: Scalar>(text: &str) -> Result<(ModelState<F>, TrainConfig)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let eof = |line: usize| GipError::Parse {
        line,
        msg: "unexpected end of file".into(),
    };

    let (_, header) = lines.next().ok_or_else(|| eof(1))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(GipError::Parse {
            line: 1,
            msg: format!("missing {MAGIC} header"),
        });
    }
    match parts.next() {
        Some(VERSION) => {}
        other => {
            return Err(GipError::Version(format!(
                "checkpoint version {}, expected {VERSION}",
                other.unwrap_or("<none>")
            )))
        }
    }
    let (_, cfg_line) = lines.next().ok_or_else(|| eof(2))?;
    let config = TrainConfig::parse_line(cfg_line).map_err(|e| GipError::Parse {
        line: 2,
        msg: e.to_string(),
    })?;

    let mut tensors: Vec<(String, Tensor<F>)> = Vec::new();
    let mut last = 2;
    while let Some((ln, head)) = lines.next() {
        last = ln;
        if head.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| GipError::Parse { line: ln, msg };
        let fields: Vec<&str> = head.split_whitespace().collect();
        let [name, rows, cols] = fields[..] else {
            return Err(bad(format!("expected `name rows cols`, found {head:?}")));
        };
        let rows: usize = rows.parse().map_err(|_| bad(format!("bad row count {rows:?}")))?;
        let cols: usize = cols.parse().map_err(|_| bad(format!("bad column count {cols:?}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rl, row) = lines.next().ok_or_else(|| eof(last + 1))?;
            last = rl;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| GipError::Parse {
                    line: rl,
                    msg: format!("bad float {tok:?}"),
                })?;
                data.push(F::of(v));
            }
            if data.len() - before != cols {
                return Err(GipError::Parse {
                    line: rl,
                    msg: format!("{} values, expected {cols}", data.len() - before),
                });
            }
        }
        tensors.push((name.to_string(), Tensor::from_vec(rows, cols, data)?));
    }

    let mut take = |name: &str| -> Result<Tensor<F>> {
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| GipError::Parse {
                line: last,
                msg: format!("missing tensor {name}"),
            })?;
        Ok(tensors.remove(pos).1)
    };
    let encoder_from = |prefix: &str, take: &mut dyn FnMut(&str) -> Result<Tensor<F>>| -> Result<EncoderParams<F>> {
        let layers = (0..config.num_layers)
            .map(|l| {
                Ok(LayerParams {
                    weight: take(&format!("{prefix}.w{l}"))?,
                    bias: take(&format!("{prefix}.b{l}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderParams { layers })
    };
    let encoder = encoder_from("encoder", &mut take)?;
    let discriminator = match config.objective.kind {
        crate::objectives::ObjectiveKind::Mvgrl => Some(take("objective.w_d")?),
        _ => None,
    };
    let target = match config.objective.kind {
        crate::objectives::ObjectiveKind::Bgrl => Some(encoder_from("target", &mut take)?),
        _ => None,
    };
    if let Some((name, _)) = tensors.first() {
        return Err(GipError::Parse {
            line: last,
            msg: format!("unexpected tensor {name}"),
        });
    }
    if let Some(d) = config.input_dim {
        encoder.check_against(&config.encoder_config(d)?)?;
    }
    Ok((
        ModelState {
            encoder,
            discriminator,
            target,
        },
        config,
    ))
}
