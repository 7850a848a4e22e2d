//! Parameter checkpoints.
//!
//! Layout: an ASCII header terminated by the line `end`, followed by the raw
//! parameters as little-endian `f64`:
//!
//! ```text
//! dsal-checkpoint v1
//! layer enc1 out=8 in=1 kernel=3
//! ...
//! layer head_final out=1 in=8 kernel=1
//! values 14611
//! end
//! <14611 x f64 LE: per layer, weights [out][in][ky][kx] then biases>
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use super::SegmenterParams;
use crate::error::{Error, Result};

const MAGIC: &str = "dsal-checkpoint v1";

pub fn write_checkpoint<W: Write>(params: &SegmenterParams, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    for (name, l) in params.layers() {
        writeln!(
            out,
            "layer {name} out={} in={} kernel={}",
            l.out_channels, l.in_channels, l.kernel
        )?;
    }
    let flat = params.to_flat();
    writeln!(out, "values {}", flat.len())?;
    writeln!(out, "end")?;
    for v in flat {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<SegmenterParams> {
    let mut line = String::new();
    let next_line = |input: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        input
            .read_line(line)
            .map_err(|e| Error::parse("checkpoint header", e.to_string()))?;
        Ok(())
    };
    next_line(&mut input, &mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::parse("checkpoint header", "bad magic line"));
    }
    let mut params = SegmenterParams::zeros();
    let mut expected = 0usize;
    for (name, l) in params.layers() {
        next_line(&mut input, &mut line)?;
        let want = format!(
            "layer {name} out={} in={} kernel={}",
            l.out_channels, l.in_channels, l.kernel
        );
        if line.trim_end() != want {
            return Err(Error::parse(
                "checkpoint header",
                format!("expected `{want}`, found `{}`", line.trim_end()),
            ));
        }
        expected += l.param_count();
    }
    next_line(&mut input, &mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("values ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse("checkpoint header", "missing `values` line"))?;
    if count != expected {
        return Err(Error::parse(
            "checkpoint header",
            format!("{count} values, architecture needs {expected}"),
        ));
    }
    next_line(&mut input, &mut line)?;
    if line.trim_end() != "end" {
        return Err(Error::parse("checkpoint header", "missing `end` line"));
    }
    let mut bytes = vec![0u8; count * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::parse("checkpoint body", e.to_string()))?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    params.for_each_mut(|p| *p = values.next().expect("count checked"));
    params.validate()?;
    Ok(params)
}

pub fn save(params: &SegmenterParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SegmenterParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_params(17);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        let header_end = buf.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        assert_eq!(buf.len() - header_end, p.param_count() * 8);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&init_params(1), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'x';
        assert!(read_checkpoint(&bad[..]).is_err());
        let truncated = &buf[..buf.len() - 8];
        assert!(read_checkpoint(truncated).is_err());
    }
}
