//! Line-oriented manifest: one record per line, `kind key=value ...`.
//!
//! ```text
//! obscura-manifest 1
//! descriptor grid=4 color_bins=8 gradient_bins=8 resize_edge=128
//! seed name=abstract value=42
//! count tag=abstract n=2
//! image id=abstract_42_0 tag=abstract path=abstract/abstract_42_0.png crop=0.08 offset=0
//! ```
//!
//! Values are percent-escaped (`%`, whitespace, `=` and control bytes), and
//! `offset=-` marks a record not yet indexed.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{CorpusError, DatasetTag};
use crate::features::DescriptorConfig;

const HEADER: &str = "obscura-manifest 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub tag: DatasetTag,
    /// Relative to the corpus root, `/`-separated.
    pub path: String,
    /// Border share removed before embedding; the stored file is uncropped.
    pub crop_fraction: f64,
    /// Row of this record in the index, once built.
    pub offset: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub descriptor: DescriptorConfig,
}

fn escape(s: &str) -> String {
    let mut out = Vec::with_capacity(s.len());
    for b in s.bytes() {
        if b == b'%' || b == b'=' || b.is_ascii_whitespace() || b.is_ascii_control() {
            out.extend_from_slice(format!("%{b:02X}").as_bytes());
        } else {
            out.push(b);
        }
    }
    String::from_utf8(out).expect("only ASCII bytes are replaced")
}

fn unescape(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

impl DatasetManifest {
    pub fn counts(&self) -> BTreeMap<DatasetTag, usize> {
        let mut c = BTreeMap::new();
        for r in &self.records {
            *c.entry(r.tag).or_insert(0) += 1;
        }
        c
    }

    pub fn count(&self, tag: DatasetTag) -> usize {
        self.records.iter().filter(|r| r.tag == tag).count()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Appends records, rejecting ids already present.
    pub fn extend(&mut self, records: Vec<ImageRecord>) -> Result<(), CorpusError> {
        let mut ids: HashSet<String> = self.records.iter().map(|r| r.id.clone()).collect();
        for r in &records {
            if !ids.insert(r.id.clone()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        self.records.extend(records);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let d = &self.descriptor;
        writeln!(out, "{HEADER}").unwrap();
        writeln!(
            out,
            "descriptor grid={} color_bins={} gradient_bins={} resize_edge={}",
            d.grid, d.color_bins, d.gradient_bins, d.resize_edge
        )
        .unwrap();
        for (name, value) in &self.seeds {
            writeln!(out, "seed name={} value={value}", escape(name)).unwrap();
        }
        for (tag, n) in self.counts() {
            writeln!(out, "count tag={tag} n={n}").unwrap();
        }
        for r in &self.records {
            let offset = r.offset.map_or("-".to_string(), |o| o.to_string());
            writeln!(
                out,
                "image id={} tag={} path={} crop={} offset={offset}",
                escape(&r.id),
                r.tag,
                escape(&r.path),
                r.crop_fraction
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => {
                return Err(CorpusError::Manifest {
                    line: 1,
                    reason: format!("expected `{HEADER}`"),
                })
            }
        }
        let mut m = DatasetManifest::default();
        let mut declared: BTreeMap<DatasetTag, usize> = BTreeMap::new();
        let mut ids = HashSet::new();
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let err = |reason: String| CorpusError::Manifest { line, reason };
            let mut parts = text.split(' ');
            let kind = parts.next().unwrap_or_default();
            let mut fields = BTreeMap::new();
            for p in parts {
                let (k, v) = p.split_once('=').ok_or_else(|| err(format!("bad field `{p}`")))?;
                let v = unescape(v).ok_or_else(|| err(format!("bad escape in `{p}`")))?;
                if fields.insert(k, v).is_some() {
                    return Err(err(format!("repeated key `{k}`")));
                }
            }
            let mut take = |k: &str| fields.remove(k).ok_or_else(|| err(format!("missing `{k}`")));
            match kind {
                "descriptor" => {
                    let mut num = |k: &str| -> Result<u32, CorpusError> {
                        take(k)?.parse().map_err(|_| err(format!("bad `{k}`")))
                    };
                    m.descriptor = DescriptorConfig {
                        grid: num("grid")?,
                        color_bins: num("color_bins")?,
                        gradient_bins: num("gradient_bins")?,
                        resize_edge: num("resize_edge")?,
                    };
                    m.descriptor.validate()?;
                }
                "seed" => {
                    let name = take("name")?;
                    let value = take("value")?.parse().map_err(|_| err("bad seed value".into()))?;
                    m.seeds.insert(name, value);
                }
                "count" => {
                    let tag: DatasetTag = take("tag")?.parse()?;
                    let n = take("n")?.parse().map_err(|_| err("bad count".into()))?;
                    declared.insert(tag, n);
                }
                "image" => {
                    let id = take("id")?;
                    let tag = take("tag")?.parse()?;
                    let path = take("path")?;
                    let crop_fraction: f64 = take("crop")?.parse().map_err(|_| err("bad crop".into()))?;
                    if !(0.0..=0.25).contains(&crop_fraction) {
                        return Err(err(format!("crop {crop_fraction} outside [0, 0.25]")));
                    }
                    let offset = match take("offset")?.as_str() {
                        "-" => None,
                        o => Some(o.parse().map_err(|_| err("bad offset".into()))?),
                    };
                    if !ids.insert(id.clone()) {
                        return Err(CorpusError::DuplicateId(id));
                    }
                    m.records.push(ImageRecord {
                        id,
                        tag,
                        path,
                        crop_fraction,
                        offset,
                    });
                }
                other => return Err(err(format!("unknown record kind `{other}`"))),
            }
            if let Some(k) = fields.keys().next() {
                return Err(err(format!("unexpected key `{k}`")));
            }
        }
        if declared != m.counts() {
            return Err(CorpusError::Manifest {
                line: 0,
                reason: "declared counts do not match records".into(),
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> DatasetManifest {
        let mut m = DatasetManifest::default();
        m.seeds.insert("abstract".into(), 42);
        m.seeds.insert("forest build".into(), u64::MAX);
        m.records.push(ImageRecord {
            id: "abstract_42_0".into(),
            tag: DatasetTag::Abstract,
            path: "abstract/abstract_42_0.png".into(),
            crop_fraction: 0.08,
            offset: Some(0),
        });
        m.records.push(ImageRecord {
            id: "wikiart_my file=1%".into(),
            tag: DatasetTag::WikiartLikeExternal,
            path: "wikiart/my file=1%.png".into(),
            crop_fraction: 0.0,
            offset: None,
        });
        m
    }

    #[test]
    fn roundtrip_is_byte_stable() {
        let m = sample();
        let text = m.to_text();
        let back = DatasetManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert!(text.contains("id=wikiart_my%20file%3D1%25"));
    }

    #[test]
    fn rejects_count_mismatch() {
        let text = sample().to_text().replace("count tag=abstract n=1", "count tag=abstract n=2");
        assert!(matches!(DatasetManifest::parse(&text), Err(CorpusError::Manifest { .. })));
    }

    #[test]
    fn rejects_duplicates_and_junk() {
        let mut m = sample();
        let dup = m.records[0].clone();
        assert!(matches!(m.extend(vec![dup]), Err(CorpusError::DuplicateId(_))));
        assert!(DatasetManifest::parse("nope\n").is_err());
        let text = sample().to_text() + "image id=x tag=abstract path=p crop=0.5 offset=-\n";
        assert!(DatasetManifest::parse(&text).is_err());
    }

    #[test]
    fn non_ascii_ids() {
        let mut m = DatasetManifest::default();
        m.records.push(ImageRecord {
            id: "wikiart_café_ü".into(),
            tag: DatasetTag::WikiartLikeExternal,
            path: "wikiart/café ü.png".into(),
            crop_fraction: 0.0,
            offset: Some(3),
        });
        let text = m.to_text();
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    fn arb_record() -> impl Strategy<Value = ImageRecord> {
        (
            "\\PC{1,12}",
            0usize..5,
            "[ -~]{1,20}",
            0.0f64..=0.25,
            proptest::option::of(any::<u32>()),
        )
            .prop_map(|(id, t, path, crop_fraction, offset)| ImageRecord {
                id,
                tag: DatasetTag::ALL[t],
                path,
                crop_fraction,
                offset,
            })
    }

    proptest! {
        #[test]
        fn arbitrary_roundtrip(records in proptest::collection::vec(arb_record(), 0..12), seed in any::<u64>()) {
            let mut m = DatasetManifest::default();
            m.seeds.insert("s".into(), seed);
            let mut seen = HashSet::new();
            m.records = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let text = m.to_text();
            let back = DatasetManifest::parse(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
