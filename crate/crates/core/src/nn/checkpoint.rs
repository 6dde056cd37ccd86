//! Text checkpoint container.
//!
//! ```text
//! rvtc-checkpoint 1
//! <name> <d0>x<d1>...
//! <v0> <v1> ... (one line, shortest round-trip decimal)
//! ...
//! ```
//!
//! Each parameter takes two lines, in registration order. Values use Rust's
//! shortest round-trip `f64` formatting, so save/load is bit exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{NnError, ParamSet, TensorBuffer};

pub const CHECKPOINT_MAGIC: &str = "rvtc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_string(params: &ParamSet) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    for (_, name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{name} {}", dims.join("x"));
        let values: Vec<String> = t.values().iter().map(|v| v.to_string()).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

pub fn from_str(text: &str) -> Result<ParamSet, NnError> {
    let err = |line: usize, msg: &str| NnError::Checkpoint(format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(err(1, "missing magic"));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| err(1, "missing version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(err(1, &format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    while let Some((i, head)) = lines.next() {
        if head.trim().is_empty() {
            continue;
        }
        let (name, dims) = head
            .rsplit_once(' ')
            .ok_or_else(|| err(i + 1, "expected '<name> <shape>'"))?;
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| err(i + 1, "bad shape"))?;
        let (j, body) = lines.next().ok_or_else(|| err(i + 2, "missing values"))?;
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| err(j + 1, "bad value"))?;
        let t = TensorBuffer::new(shape, values).map_err(|e| err(j + 1, &e.to_string()))?;
        params.add(name, t);
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, to_string(params)).map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn load(path: &Path) -> Result<ParamSet, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut p = ParamSet::new();
            let n = values.len();
            p.add("layers.0.w", TensorBuffer::matrix(1, n, values).unwrap());
            p.add("bias", TensorBuffer::new(vec![3], vec![0.1, -0.0, 1e-300]).unwrap());
            let back = from_str(&to_string(&p)).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((_, na, a), (_, nb, b)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(a.shape(), b.shape());
                let bits_a: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(from_str("").is_err());
        assert!(from_str("other 1\n").is_err());
        assert!(from_str("rvtc-checkpoint 2\n").is_err());
        assert!(from_str("rvtc-checkpoint 1\nw 2x2\n1 2 3\n").is_err());
        assert!(from_str("rvtc-checkpoint 1\nw 2\n1 x\n").is_err());
        assert_eq!(from_str("rvtc-checkpoint 1\n").unwrap().len(), 0);
    }
}
