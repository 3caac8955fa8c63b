//! Plain-text layer dump.
//!
//! ```text
//! etr-adapter 1 <lora|mtl-lora> d=<d> k=<k> r=<r> n_tasks=<T> n_up=<n> tau=<τ> alpha=<α>
//! W <rows> <cols> <row-major values…>
//! A <rows> <cols> <values…>
//! B <rows> <cols> <values…>                  (lora)
//! Lambda<t> <rows> <cols> <values…>          (mtl-lora, t = 0..T)
//! B<i> <rows> <cols> <values…>               (mtl-lora, i = 0..n)
//! logits<t> 1 <n> <values…>                  (mtl-lora, t = 0..T)
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a dump reads
//! back bit-exactly. A LoRA layer is written with `n_tasks=1 n_up=1 tau=0`;
//! an MTL-LoRA layer with `alpha=0`.

use std::fmt::Write as _;

use super::{AdapterError, LoraLayer, Matrix, MtlLoraLayer, Result};

const MAGIC: &str = "etr-adapter";
const VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub enum StoredLayer {
    Lora(LoraLayer),
    MtlLora(MtlLoraLayer),
}

fn matrix_line(out: &mut String, name: &str, m: &Matrix) {
    write!(out, "{name} {} {}", m.rows(), m.cols()).unwrap();
    for v in m.as_slice() {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
}

fn header(kind: &str, base: &Matrix, r: usize, n_tasks: usize, n_up: usize, tau: f64, alpha: f64) -> String {
    format!(
        "{MAGIC} {VERSION} {kind} d={} k={} r={r} n_tasks={n_tasks} n_up={n_up} tau={tau:?} alpha={alpha:?}\n",
        base.rows(),
        base.cols()
    )
}

pub fn write_layer(layer: &StoredLayer) -> String {
    match layer {
        StoredLayer::Lora(l) => {
            let mut out = header("lora", &l.base, l.rank(), 1, 1, 0.0, l.alpha);
            matrix_line(&mut out, "W", &l.base);
            matrix_line(&mut out, "A", &l.down);
            matrix_line(&mut out, "B", &l.up);
            out
        }
        StoredLayer::MtlLora(l) => {
            let mut out = header("mtl-lora", &l.base, l.rank(), l.n_tasks(), l.n_up(), l.tau, 0.0);
            matrix_line(&mut out, "W", &l.base);
            matrix_line(&mut out, "A", &l.down);
            for (t, m) in l.task_transforms.iter().enumerate() {
                matrix_line(&mut out, &format!("Lambda{t}"), m);
            }
            for (i, m) in l.ups.iter().enumerate() {
                matrix_line(&mut out, &format!("B{i}"), m);
            }
            for (t, logits) in l.mixture_logits.iter().enumerate() {
                let m = Matrix::from_vec(1, logits.len(), logits.clone()).expect("finite logits");
                matrix_line(&mut out, &format!("logits{t}"), &m);
            }
            out
        }
    }
}

fn format_err(msg: impl Into<String>) -> AdapterError {
    AdapterError::Format(msg.into())
}

struct Header {
    kind: String,
    fields: std::collections::HashMap<String, String>,
}

impl Header {
    fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(format_err("missing etr-adapter magic"));
        }
        match parts.next() {
            Some(VERSION) => {}
            other => return Err(format_err(format!("unsupported version {other:?}"))),
        }
        let kind = parts.next().ok_or_else(|| format_err("missing layer kind"))?.to_string();
        let fields = parts
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| format_err(format!("bad header field {p:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind, fields })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.fields
            .get(key)
            .ok_or_else(|| format_err(format!("header lacks {key}")))?
            .parse()
            .map_err(|_| format_err(format!("header field {key} is not a number")))
    }
}

fn read_matrix<'a>(lines: &mut impl Iterator<Item = &'a str>, name: &str) -> Result<Matrix> {
    let line = lines.next().ok_or_else(|| format_err(format!("missing {name}")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(name) {
        return Err(format_err(format!("expected {name}, found {line:.20}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format_err(format!("{name}: bad {what}")))
    };
    let (rows, cols) = (num("rows")?, num("cols")?);
    let values = parts
        .map(|v| v.parse::<f64>().map_err(|_| format_err(format!("{name}: bad value {v:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(rows, cols, values)
}

pub fn read_layer(text: &str) -> Result<StoredLayer> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = Header::parse(lines.next().ok_or_else(|| format_err("empty file"))?)?;
    let (d, k, r): (usize, usize, usize) = (header.get("d")?, header.get("k")?, header.get("r")?);
    let base = read_matrix(&mut lines, "W")?;
    let down = read_matrix(&mut lines, "A")?;
    if (base.rows(), base.cols(), down.rows()) != (d, k, r) {
        return Err(format_err("matrix shapes disagree with header"));
    }
    let layer = match header.kind.as_str() {
        "lora" => {
            let up = read_matrix(&mut lines, "B")?;
            StoredLayer::Lora(LoraLayer::from_parts(base, down, up, header.get("alpha")?)?)
        }
        "mtl-lora" => {
            let n_tasks: usize = header.get("n_tasks")?;
            let n_up: usize = header.get("n_up")?;
            let transforms = (0..n_tasks)
                .map(|t| read_matrix(&mut lines, &format!("Lambda{t}")))
                .collect::<Result<Vec<_>>>()?;
            let ups = (0..n_up)
                .map(|i| read_matrix(&mut lines, &format!("B{i}")))
                .collect::<Result<Vec<_>>>()?;
            let logits = (0..n_tasks)
                .map(|t| read_matrix(&mut lines, &format!("logits{t}")).map(|m| m.as_slice().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            StoredLayer::MtlLora(MtlLoraLayer::from_parts(
                base,
                down,
                transforms,
                ups,
                logits,
                header.get("tau")?,
            )?)
        }
        other => return Err(format_err(format!("unknown layer kind {other:?}"))),
    };
    if lines.next().is_some() {
        return Err(format_err("trailing data after layer"));
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn mtl_round_trip_is_exact() {
        let mut rng = SeededRng::new(2);
        let mut layer = MtlLoraLayer::new(Matrix::uniform(3, 4, -1.0, 1.0, &mut rng), 2, 3, 2, 0.5, 7).unwrap();
        layer.ups[1] = Matrix::uniform(3, 2, -1.0, 1.0, &mut rng);
        layer.mixture_logits[2] = vec![0.1, -1.0 / 3.0];
        let stored = StoredLayer::MtlLora(layer);
        let text = write_layer(&stored);
        assert!(text.starts_with("etr-adapter 1 mtl-lora d=3 k=4 r=2 n_tasks=3 n_up=2 tau=0.5"));
        assert_eq!(read_layer(&text).unwrap(), stored);
    }

    #[test]
    fn lora_round_trip_and_errors() {
        let layer = LoraLayer::new(Matrix::identity(3), 1, 8.0, 1).unwrap();
        let stored = StoredLayer::Lora(layer);
        let text = write_layer(&stored);
        assert_eq!(read_layer(&text).unwrap(), stored);
        assert!(read_layer("nonsense").is_err());
        assert!(read_layer(&text.replace("d=3", "d=4")).is_err());
        assert!(read_layer(&format!("{text}extra 1 1 0\n")).is_err());
    }
}
