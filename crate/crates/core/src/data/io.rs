//! Corpus (`DCRP`) and normalisation-stats (`DSTA`) files. All integers and
//! floats are little-endian.

use std::path::Path;

use super::{Corpus, Domain, NormStats, Utterance, ABSENT_LABEL};
use crate::binio::{len_u32, put_u32, read_file, write_file, Reader};
use crate::error::Result;

pub const CORPUS_MAGIC: &[u8; 4] = b"DCRP";
pub const CORPUS_VERSION: u32 = 1;
pub const STATS_MAGIC: &[u8; 4] = b"DSTA";

pub fn encode_corpus(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    put_u32(&mut out, CORPUS_VERSION);
    put_u32(&mut out, corpus.sample_rate);
    put_u32(&mut out, len_u32(corpus.utterances.len(), "utterance count")?);
    for u in &corpus.utterances {
        out.push(u.domain.label());
        let class = u.class_label.map_or(ABSENT_LABEL, |c| c as i32);
        out.extend_from_slice(&class.to_le_bytes());
        put_u32(&mut out, len_u32(u.samples.len(), "sample count")?);
        for &s in &u.samples {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_corpus(bytes: &[u8], path: &Path) -> Result<Corpus> {
    let mut r = Reader::new(bytes, path);
    r.magic(CORPUS_MAGIC)?;
    r.version(CORPUS_VERSION)?;
    let sample_rate = r.u32()?;
    let count = r.u32()? as usize;
    let mut utterances = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let raw_domain = r.u8()?;
        let domain = Domain::from_label(raw_domain)
            .ok_or_else(|| r.error(format!("utterance {i}: domain byte {raw_domain}")))?;
        let class = r.i32()?;
        let class_label = match class {
            ABSENT_LABEL if domain == Domain::Target => None,
            ABSENT_LABEL => return Err(r.error(format!("utterance {i}: source utterance without label"))),
            c if c >= 0 => Some(c as usize),
            c => return Err(r.error(format!("utterance {i}: class {c}"))),
        };
        let n = r.u32()? as usize;
        let raw = r.bytes(n.checked_mul(4).ok_or_else(|| r.error("sample count overflow"))?)?;
        let samples = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect();
        utterances.push(Utterance {
            samples,
            class_label,
            domain,
        });
    }
    r.finish()?;
    Ok(Corpus {
        sample_rate,
        utterances,
    })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_file(path, &encode_corpus(corpus)?)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    decode_corpus(&read_file(path)?, path)
}

pub fn encode_stats(stats: &NormStats) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 16 * stats.dim());
    out.extend_from_slice(STATS_MAGIC);
    put_u32(&mut out, len_u32(stats.dim(), "stats dimension")?);
    for v in stats.mean.iter().chain(&stats.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_stats(bytes: &[u8], path: &Path) -> Result<NormStats> {
    let mut r = Reader::new(bytes, path);
    r.magic(STATS_MAGIC)?;
    let t = r.u32()? as usize;
    let read = |r: &mut Reader| (0..t).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
    let mean = read(&mut r)?;
    let std = read(&mut r)?;
    r.finish()?;
    Ok(NormStats { mean, std })
}

pub fn write_stats(path: &Path, stats: &NormStats) -> Result<()> {
    write_file(path, &encode_stats(stats)?)
}

pub fn read_stats(path: &Path) -> Result<NormStats> {
    decode_stats(&read_file(path)?, path)
}
