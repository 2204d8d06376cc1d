//! The `.gckp` checkpoint container: a versioned named-tensor file
//! holding everything a paused run needs to resume bit-identically.
//!
//! Layout, integers little-endian, f64 as raw IEEE bits:
//!
//! ```text
//! magic "GCKP", u32 version
//! u64 epoch, u64 stage, u64 stage_epoch, u64 no_improve, u8 done
//! tensor table: u64 count, then per tensor
//!     name (u32 len + UTF-8), u32 rank, u64 dims..., f64 values...
//! optimizer table: u64 count, then per slot
//!     name, u64 t, f64 beta1_pow, f64 beta2_pow,
//!     u64 len + f64 m..., u64 len + f64 v...
//! rng state: 32 seed bytes, u64 stream, u128 word position
//! best snapshot: u8 flag, then f64 metric, u64 epoch, tensor table
//! history: u64 count, then per epoch
//!     u64 epoch, u64 stage, stage name, f64 task/cls/lambda/total,
//!     u8 flag + f64 dev metric
//! ```

use std::path::Path;

use glyce_core::rng::RngState;
use glyce_core::train::{AdamSlot, BestSnapshot, Checkpoint, EpochRecord, CHECKPOINT_VERSION};
use glyce_core::Tensor;

use crate::bytes::{push_f64, push_f64_slice, push_string, push_u32, push_u64, ByteReader};
use crate::error::{read_bytes, write_bytes, CliError, CliResult};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GCKP";

fn push_tensor_table(out: &mut Vec<u8>, params: &[(String, Tensor)]) {
    push_u64(out, params.len() as u64);
    for (name, t) in params {
        push_string(out, name);
        push_u32(out, t.shape().len() as u32);
        for &d in t.shape() {
            push_u64(out, d as u64);
        }
        push_f64_slice(out, t.values());
    }
}

fn read_tensor_table(r: &mut ByteReader) -> Result<Vec<(String, Tensor)>, String> {
    let count = r.count("tensor table", 8)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel.saturating_mul(8) > r.remaining() {
            return Err(format!(
                "tensor {name:?} shape {shape:?} wants {numel} values, only {} bytes left at byte {}",
                r.remaining(),
                r.pos()
            ));
        }
        let values = r.f64_vec(numel, "tensor values")?;
        let t = Tensor::from_values(&shape, values).map_err(|e| format!("tensor {name:?}: {e}"))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    push_u32(&mut out, ckpt.version);
    push_u64(&mut out, ckpt.epoch as u64);
    push_u64(&mut out, ckpt.stage as u64);
    push_u64(&mut out, ckpt.stage_epoch as u64);
    push_u64(&mut out, ckpt.no_improve as u64);
    out.push(ckpt.done as u8);

    push_tensor_table(&mut out, &ckpt.params);

    push_u64(&mut out, ckpt.adam.len() as u64);
    for (name, slot) in &ckpt.adam {
        push_string(&mut out, name);
        push_u64(&mut out, slot.t);
        push_f64(&mut out, slot.beta1_pow);
        push_f64(&mut out, slot.beta2_pow);
        push_u64(&mut out, slot.m.len() as u64);
        push_f64_slice(&mut out, &slot.m);
        push_u64(&mut out, slot.v.len() as u64);
        push_f64_slice(&mut out, &slot.v);
    }

    out.extend_from_slice(&ckpt.rng.seed);
    push_u64(&mut out, ckpt.rng.stream);
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());

    match &ckpt.best {
        None => out.push(0),
        Some(b) => {
            out.push(1);
            push_f64(&mut out, b.metric);
            push_u64(&mut out, b.epoch as u64);
            push_tensor_table(&mut out, &b.params);
        }
    }

    push_u64(&mut out, ckpt.history.len() as u64);
    for rec in &ckpt.history {
        push_u64(&mut out, rec.epoch as u64);
        push_u64(&mut out, rec.stage as u64);
        push_string(&mut out, &rec.stage_name);
        push_f64(&mut out, rec.task_loss);
        push_f64(&mut out, rec.cls_loss);
        push_f64(&mut out, rec.lambda);
        push_f64(&mut out, rec.total_loss);
        match rec.dev_metric {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                push_f64(&mut out, m);
            }
        }
    }
    out
}

fn read_flag(r: &mut ByteReader, what: &str) -> Result<bool, String> {
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(format!("{what} flag at byte {} is {other}, want 0 or 1", r.pos() - 1)),
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, String> {
    let mut r = ByteReader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic at byte 0: want \"GCKP\", found {magic:?}"));
    }
    let version = r.u32("format version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format!(
            "unsupported checkpoint version {version} at byte 4 (want {CHECKPOINT_VERSION})"
        ));
    }
    let epoch = r.u64("epoch")? as usize;
    let stage = r.u64("stage")? as usize;
    let stage_epoch = r.u64("stage epoch")? as usize;
    let no_improve = r.u64("patience counter")? as usize;
    let done = read_flag(&mut r, "done")?;

    let params = read_tensor_table(&mut r)?;

    let n_slots = r.count("optimizer table", 8)?;
    let mut adam = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let name = r.string("optimizer slot name")?;
        let t = r.u64("step count")?;
        let beta1_pow = r.f64("beta1 power")?;
        let beta2_pow = r.f64("beta2 power")?;
        let m_len = r.count("first moment length", 8)?;
        let m = r.f64_vec(m_len, "first moment")?;
        let v_len = r.count("second moment length", 8)?;
        let v = r.f64_vec(v_len, "second moment")?;
        adam.push((name, AdamSlot { t, beta1_pow, beta2_pow, m, v }));
    }

    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng word position")?;
    let rng = RngState { seed, stream, word_pos };

    let best = if read_flag(&mut r, "best snapshot")? {
        let metric = r.f64("best metric")?;
        let epoch = r.u64("best epoch")? as usize;
        let params = read_tensor_table(&mut r)?;
        Some(BestSnapshot { metric, epoch, params })
    } else {
        None
    };

    let n_hist = r.count("history", 8)?;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let epoch = r.u64("history epoch")? as usize;
        let stage = r.u64("history stage")? as usize;
        let stage_name = r.string("history stage name")?;
        let task_loss = r.f64("task loss")?;
        let cls_loss = r.f64("cls loss")?;
        let lambda = r.f64("lambda")?;
        let total_loss = r.f64("total loss")?;
        let dev_metric = if read_flag(&mut r, "dev metric")? {
            Some(r.f64("dev metric value")?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            stage,
            stage_name,
            task_loss,
            cls_loss,
            lambda,
            total_loss,
            dev_metric,
        });
    }

    r.expect_done("checkpoint")?;
    Ok(Checkpoint {
        version,
        epoch,
        stage,
        stage_epoch,
        no_improve,
        done,
        params,
        adam,
        rng,
        best,
        history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    write_bytes(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use glyce_core::rng::GlyceRng;

    fn sample() -> Checkpoint {
        let t1 = Tensor::from_values(&[2, 3], vec![0.5, -1.0, 3.25, 0.0, -0.0, 9e-300]).unwrap();
        let t2 = Tensor::from_values(&[], vec![42.0]).unwrap();
        let slot = |n: usize| AdamSlot {
            t: 7,
            beta1_pow: 0.9f64.powi(7),
            beta2_pow: 0.999f64.powi(7),
            m: vec![1e-3; n],
            v: vec![2e-6; n],
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch: 12,
            stage: 1,
            stage_epoch: 3,
            no_improve: 2,
            done: false,
            params: vec![("a.w".into(), t1.clone()), ("b".into(), t2.clone())],
            adam: vec![("a.w".into(), slot(6)), ("b".into(), slot(1))],
            rng: GlyceRng::seed_from(5, 12).state(),
            best: Some(BestSnapshot {
                metric: 0.875,
                epoch: 9,
                params: vec![("a.w".into(), t1), ("b".into(), t2)],
            }),
            history: vec![
                EpochRecord {
                    epoch: 0,
                    stage: 0,
                    stage_name: "context+head".into(),
                    task_loss: 1.25,
                    cls_loss: 0.5,
                    lambda: 0.1,
                    total_loss: 1.175,
                    dev_metric: None,
                },
                EpochRecord {
                    epoch: 1,
                    stage: 0,
                    stage_name: "context+head".into(),
                    task_loss: 1.0,
                    cls_loss: 0.4,
                    lambda: 0.08,
                    total_loss: 0.952,
                    dev_metric: Some(0.875),
                },
            ],
        }
    }

    #[test]
    fn roundtrip_is_equal() {
        let ckpt = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn roundtrip_without_best() {
        let mut ckpt = sample();
        ckpt.best = None;
        ckpt.done = true;
        let back = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = encode_checkpoint(&sample());
        buf[1] = b'X';
        let err = decode_checkpoint(&buf).unwrap_err();
        assert!(err.starts_with("bad magic at byte 0"), "{err}");
    }

    #[test]
    fn future_version_rejected() {
        let mut buf = encode_checkpoint(&sample());
        buf[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_checkpoint(&buf).unwrap_err();
        assert_eq!(err, "unsupported checkpoint version 2 at byte 4 (want 1)");
    }

    #[test]
    fn truncation_reports_offset() {
        let buf = encode_checkpoint(&sample());
        for cut in [10, 60, buf.len() / 2, buf.len() - 3] {
            let err = decode_checkpoint(&buf[..cut]).unwrap_err();
            assert!(err.contains("at byte"), "cut {cut}: {err}");
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = encode_checkpoint(&sample());
        buf.extend_from_slice(&[1, 2, 3]);
        let err = decode_checkpoint(&buf).unwrap_err();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn corrupt_flag_byte_rejected() {
        let ckpt = sample();
        let buf = encode_checkpoint(&ckpt);
        // The done flag sits right after magic, version, and four u64s.
        let done_at = 4 + 4 + 32;
        assert_eq!(buf[done_at], 0);
        let mut bad = buf;
        bad[done_at] = 7;
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(err.contains("want 0 or 1"), "{err}");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.gckp");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }
}
