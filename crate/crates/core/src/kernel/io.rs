//! Text kernel files.
//!
//! Dense: a line holding `n`, then `n` rows of `n` probabilities.
//! Sparse: a line holding `n` (optionally `n sparse`), then `i j p` lines;
//! mass missing from a row goes on its diagonal. Lines starting with `#`
//! are comments, except `# label <name>` which names states in order.

use sha2::{Digest, Sha256};

use super::StochasticKernel;
use crate::error::{Error, Result};

pub fn parse_kernel(text: &str) -> Result<StochasticKernel> {
    let mut labels = Vec::new();
    let mut lines: Vec<(usize, Vec<&str>)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("label") {
                labels.push(name.trim().to_string());
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        lines.push((no + 1, line.split_whitespace().collect()));
    }
    let (hline, header) = lines
        .first()
        .cloned()
        .ok_or(Error::Parse { line: 0, msg: "empty kernel file".into() })?;
    let n: usize = header[0]
        .parse()
        .map_err(|_| Error::Parse { line: hline, msg: format!("bad state count {:?}", header[0]) })?;
    let mode = header.get(1).copied();
    let body = &lines[1..];
    let dense_shape = body.len() == n && body.iter().all(|(_, t)| t.len() == n);
    let kernel = match mode {
        Some("dense") => parse_dense(n, body)?,
        Some("sparse") => parse_sparse(n, body)?,
        Some(other) => {
            return Err(Error::Parse { line: hline, msg: format!("unknown format {other:?}") })
        }
        None if dense_shape => match parse_dense(n, body) {
            Ok(k) => k,
            Err(e) if n == 3 => parse_sparse(n, body).map_err(|_| e)?,
            Err(e) => return Err(e),
        },
        None => parse_sparse(n, body)?,
    };
    if labels.is_empty() {
        Ok(kernel)
    } else {
        kernel.with_labels(labels)
    }
}

fn number(line: usize, tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad number {tok:?}") })
}

fn index(line: usize, tok: &str, n: usize) -> Result<usize> {
    let i: usize = tok
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad index {tok:?}") })?;
    if i >= n {
        return Err(Error::Parse { line, msg: format!("index {i} out of range") });
    }
    Ok(i)
}

fn parse_dense(n: usize, body: &[(usize, Vec<&str>)]) -> Result<StochasticKernel> {
    if body.len() != n {
        return Err(Error::Parse {
            line: body.last().map(|l| l.0).unwrap_or(1),
            msg: format!("expected {n} rows, found {}", body.len()),
        });
    }
    let mut data = Vec::with_capacity(n * n);
    for (line, toks) in body {
        if toks.len() != n {
            return Err(Error::Parse { line: *line, msg: format!("expected {n} entries") });
        }
        for t in toks {
            data.push(number(*line, t)?);
        }
    }
    StochasticKernel::from_dense(n, data)
}

fn parse_sparse(n: usize, body: &[(usize, Vec<&str>)]) -> Result<StochasticKernel> {
    let mut data = vec![0.0; n * n];
    for (line, toks) in body {
        if toks.len() != 3 {
            return Err(Error::Parse { line: *line, msg: "expected `i j p`".into() });
        }
        let i = index(*line, toks[0], n)?;
        let j = index(*line, toks[1], n)?;
        data[i * n + j] += number(*line, toks[2])?;
    }
    for i in 0..n {
        let s: f64 = data[i * n..(i + 1) * n].iter().sum();
        if s < 1.0 {
            data[i * n + i] += 1.0 - s;
        }
    }
    StochasticKernel::from_dense(n, data)
}

pub fn format_dense(kernel: &StochasticKernel) -> String {
    let n = kernel.n_states();
    let mut out = String::new();
    if let Some(labels) = kernel.labels() {
        for l in labels {
            out.push_str(&format!("# label {l}\n"));
        }
    }
    out.push_str(&format!("{n}\n"));
    for x in 0..n {
        let row: Vec<String> = kernel.row(x).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn format_sparse(kernel: &StochasticKernel) -> String {
    let n = kernel.n_states();
    let mut out = String::new();
    if let Some(labels) = kernel.labels() {
        for l in labels {
            out.push_str(&format!("# label {l}\n"));
        }
    }
    out.push_str(&format!("{n} sparse\n"));
    for x in 0..n {
        for &(y, p) in kernel.support(x) {
            out.push_str(&format!("{x} {y} {p:?}\n"));
        }
    }
    out
}

/// SHA-256 over the state count and the little-endian bits of every entry.
pub fn kernel_hash(kernel: &StochasticKernel) -> String {
    let mut h = Sha256::new();
    h.update((kernel.n_states() as u64).to_le_bytes());
    for v in kernel.dense() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
