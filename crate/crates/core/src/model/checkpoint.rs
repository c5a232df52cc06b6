//! Checkpoint files.
//!
//! ```text
//! DUALPROP v1
//! <layer count>
//! bias <off|augmented>
//! <in> <out> <activation tag>      (one line per layer)
//! <row-major f64 little-endian weight payload, W_0 first>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{BiasMode, LayerSpec, ModelError, NetworkParams};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &str = "DUALPROP v1";

pub fn write_checkpoint<W: Write>(params: &NetworkParams, mut out: W) -> Result<(), ModelError> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "{}", params.depth())?;
    let bias = match params.bias_mode() {
        BiasMode::Off => "off",
        BiasMode::Augmented => "augmented",
    };
    writeln!(out, "bias {bias}")?;
    for s in params.layers() {
        writeln!(out, "{} {} {}", s.in_dim, s.out_dim, s.activation)?;
    }
    for w in params.weights() {
        for x in w.as_slice() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn header_line<R: BufRead>(input: &mut R, what: &str) -> Result<String, ModelError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(ModelError::Checkpoint(format!("unexpected end of file reading {what}")));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<NetworkParams, ModelError> {
    let bad = |msg: String| ModelError::Checkpoint(msg);
    let magic = header_line(&mut input, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic line `{magic}`")));
    }
    let count: usize = header_line(&mut input, "layer count")?
        .trim()
        .parse()
        .map_err(|_| bad("layer count is not an integer".into()))?;
    let bias = match header_line(&mut input, "bias mode")?.as_str() {
        "bias off" => BiasMode::Off,
        "bias augmented" => BiasMode::Augmented,
        other => return Err(bad(format!("bad bias line `{other}`"))),
    };
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let line = header_line(&mut input, "layer line")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("layer {k}: expected `in out activation`, got `{line}`")));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("layer {k}: bad width `{s}`")));
        layers.push(LayerSpec::new(dim(fields[0])?, dim(fields[1])?, fields[2].parse()?));
    }
    let extra = usize::from(bias == BiasMode::Augmented);
    let mut weights = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for (k, s) in layers.iter().enumerate() {
        let (rows, cols) = (s.out_dim, s.in_dim + extra);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            input
                .read_exact(&mut buf)
                .map_err(|_| bad(format!("weight payload truncated in layer {k}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        weights.push(Matrix::from_vec(rows, cols, data)?);
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after weight payload".into()));
    }
    NetworkParams::new(layers, weights, bias)
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights_with_bias, mlp_specs, ActivationKind};

    #[test]
    fn round_trip_is_bit_exact() {
        for bias in [BiasMode::Off, BiasMode::Augmented] {
            let specs = mlp_specs(&[5, 4, 3], ActivationKind::LeakyRelu(0.25)).unwrap();
            let p = init_weights_with_bias(&specs, bias, 3).unwrap();
            let mut bytes = Vec::new();
            write_checkpoint(&p, &mut bytes).unwrap();
            assert!(bytes.starts_with(b"DUALPROP v1\n2\n"));
            let q = read_checkpoint(&bytes[..]).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn header_layout() {
        let specs = mlp_specs(&[2, 1], ActivationKind::Relu).unwrap();
        let p = init_weights_with_bias(&specs, BiasMode::Off, 0).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let text_len = "DUALPROP v1\n1\nbias off\n2 1 identity\n".len();
        assert_eq!(&bytes[..text_len], b"DUALPROP v1\n1\nbias off\n2 1 identity\n");
        assert_eq!(bytes.len(), text_len + 2 * 8);
        assert_eq!(&bytes[text_len..text_len + 8], &p.weights()[0][(0, 0)].to_le_bytes());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_checkpoint(&b"NOPE\n"[..]).is_err());
        assert!(read_checkpoint(&b""[..]).is_err());
        let specs = mlp_specs(&[2, 2], ActivationKind::Relu).unwrap();
        let p = init_weights_with_bias(&specs, BiasMode::Off, 0).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(ModelError::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
    }
}
