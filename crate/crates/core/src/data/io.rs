//! JSON-lines persistence: one header line, then one line per transition.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Episode, EpisodeMeta, NormStats, Split, Transition};
use crate::env::{EnvConfig, Obs};
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    env_cfg: EnvConfig,
    kind: String,
    seed: u64,
    split: Split,
    norm_stats: NormStats,
    episodes: Vec<EpisodeHeader>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    #[serde(flatten)]
    meta: EpisodeMeta,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    episode_id: usize,
    t: usize,
    s: Obs,
    a: f64,
    r: f64,
    s_next: Obs,
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_to(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    let header = Header {
        version: DATASET_VERSION,
        env_cfg: ds.env_cfg.clone(),
        kind: ds.kind.clone(),
        seed: ds.seed,
        split: ds.split.clone(),
        norm_stats: ds.norm_stats.clone(),
        episodes: ds
            .episodes
            .iter()
            .map(|e| EpisodeHeader {
                meta: e.meta.clone(),
                len: e.len(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for (episode_id, ep) in ds.episodes.iter().enumerate() {
        for (t, tr) in ep.transitions.iter().enumerate() {
            let line = Line {
                episode_id,
                t,
                s: tr.s,
                a: tr.a,
                r: tr.r,
                s_next: tr.s_next,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    read_from(BufReader::new(File::open(path)?))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub(crate) fn read_from(r: impl BufRead) -> Result<Dataset> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line"))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(1, e.to_string()))?;
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let mut episodes: Vec<Episode> = header
        .episodes
        .iter()
        .map(|h| Episode {
            transitions: Vec::with_capacity(h.len),
            meta: h.meta.clone(),
        })
        .collect();

    let mut last_line = 1;
    for (idx, text) in lines {
        let line_no = idx + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        last_line = line_no;
        let l: Line = serde_json::from_str(&text).map_err(|e| parse_err(line_no, e.to_string()))?;
        let ep = episodes
            .get_mut(l.episode_id)
            .ok_or_else(|| parse_err(line_no, format!("unknown episode_id {}", l.episode_id)))?;
        if l.t != ep.transitions.len() {
            return Err(parse_err(
                line_no,
                format!("episode {} expected t={}, found t={}", l.episode_id, ep.transitions.len(), l.t),
            ));
        }
        if let Some(prev) = ep.transitions.last() {
            if prev.s_next != l.s {
                return Err(parse_err(line_no, "s does not match previous s_next"));
            }
        }
        let tr = Transition {
            s: l.s,
            a: l.a,
            r: l.r,
            s_next: l.s_next,
        };
        if !(tr.s.is_finite() && tr.s_next.is_finite() && tr.a.is_finite() && tr.r.is_finite()) {
            return Err(parse_err(line_no, "non-finite value"));
        }
        ep.transitions.push(tr);
    }
    for (i, (ep, h)) in episodes.iter().zip(&header.episodes).enumerate() {
        if ep.len() != h.len {
            return Err(parse_err(
                last_line,
                format!("truncated: episode {i} has {} of {} transitions", ep.len(), h.len),
            ));
        }
    }
    if !header.split.is_partition_of(episodes.len()) {
        return Err(parse_err(1, "split does not partition the episodes"));
    }
    Ok(Dataset {
        kind: header.kind,
        seed: header.seed,
        env_cfg: header.env_cfg,
        episodes,
        split: header.split,
        norm_stats: header.norm_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, PolicyKind};

    fn small() -> Dataset {
        let cfg = EnvConfig {
            episode_len: 25,
            ..EnvConfig::noisy()
        };
        generate(PolicyKind::Medium, 3, &cfg, 5).unwrap()
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = small();
        let back = read_from(bytes(&ds).as_slice()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        assert_eq!(bytes(&small()), bytes(&small()));
    }

    #[test]
    fn truncated_file_names_the_line() {
        let buf = bytes(&small());
        let text = String::from_utf8(buf).unwrap();
        // cut in the middle of line 10
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        let cut = &cut[..cut.len() - 7];
        match read_from(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("unexpected {other:?}"),
        }
        // cut on a line boundary
        let whole: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_from(whole.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_only_file_is_an_empty_dataset() {
        let ds = Dataset::train_only("random".into(), 3, EnvConfig::default(), vec![]).unwrap();
        let back = read_from(bytes(&ds).as_slice()).unwrap();
        assert!(back.episodes.is_empty());
        assert_eq!(back.kind, "random");
        assert_eq!(back.seed, 3);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = String::from_utf8(bytes(&small())).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(read_from(text.as_bytes()), Err(Error::Version { found: 2, .. })));
    }
}
