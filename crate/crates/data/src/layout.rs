//! Directory layout and the per-subset manifest.
//!
//! ```text
//! <root>/<subset>/manifest.tsv
//! <root>/<subset>/palette.txt
//! <root>/<subset>/<split>/<video_id>/frames/<t>.png
//! <root>/<subset>/<split>/<video_id>/masks/<t>.png
//! <root>/<subset>/<split>/<video_id>/audio.wav
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use avs_core::types::{SettingKind, TaskSetting};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    SingleSource,
    MultiSource,
    Semantic,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::SingleSource, Subset::MultiSource, Subset::Semantic];

    pub fn dir_name(self) -> &'static str {
        match self {
            Subset::SingleSource => "single_source",
            Subset::MultiSource => "multi_source",
            Subset::Semantic => "semantic",
        }
    }

    pub fn clips(self) -> usize {
        match self {
            Subset::Semantic => 10,
            _ => 5,
        }
    }

    pub fn kind(self) -> SettingKind {
        match self {
            Subset::SingleSource => SettingKind::S4,
            Subset::MultiSource => SettingKind::Ms3,
            Subset::Semantic => SettingKind::Avss,
        }
    }

    /// Task setting for this subset; `categories` only matters for the
    /// semantic subset.
    pub fn setting(self, categories: usize) -> TaskSetting {
        match self {
            Subset::SingleSource => TaskSetting::s4(),
            Subset::MultiSource => TaskSetting::ms3(),
            Subset::Semantic => TaskSetting::avss(categories),
        }
    }

    pub fn is_binary(self) -> bool {
        self != Subset::Semantic
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single_source" | "s4" => Ok(Subset::SingleSource),
            "multi_source" | "ms3" => Ok(Subset::MultiSource),
            "semantic" | "avss" => Ok(Subset::Semantic),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

impl From<SettingKind> for Subset {
    fn from(k: SettingKind) -> Self {
        match k {
            SettingKind::S4 => Subset::SingleSource,
            SettingKind::Ms3 => Subset::MultiSource,
            SettingKind::Avss => Subset::Semantic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    pub clips: usize,
    /// Category names of the sounding objects.
    pub labels: Vec<String>,
    /// Audio-swap partner: same frames, different sounding schedule.
    pub partner: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub subset: Subset,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PALETTE_FILE: &str = "palette.txt";
const HEADER: &str = "# video_id\tsplit\tclips\tlabels\tpartner";

impl DatasetManifest {
    pub fn subset_dir(&self) -> PathBuf {
        self.root.join(self.subset.dir_name())
    }

    pub fn manifest_path(root: &Path, subset: Subset) -> PathBuf {
        root.join(subset.dir_name()).join(MANIFEST_FILE)
    }

    pub fn palette_path(&self) -> PathBuf {
        self.subset_dir().join(PALETTE_FILE)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    /// Video ids must be unique, hence splits are disjoint; every entry has
    /// the subset's clip count. Lines are numbered as written by `save`.
    pub fn check(&self) -> Result<()> {
        let lines: Vec<usize> = (0..self.entries.len()).map(|i| i + 2).collect();
        self.check_lines(&lines)
    }

    fn check_lines(&self, lines: &[usize]) -> Result<()> {
        let path = Self::manifest_path(&self.root, self.subset);
        let mut seen = BTreeSet::new();
        for (e, &line) in self.entries.iter().zip(lines) {
            let err = |msg: String| DataError::Manifest { path: path.clone(), line, msg };
            if !seen.insert(e.video_id.as_str()) {
                return Err(err(format!("video {} listed twice", e.video_id)));
            }
            if e.clips != self.subset.clips() {
                return Err(err(format!("{} clips, subset {} needs {}", e.clips, self.subset, self.subset.clips())));
            }
            if e.video_id.is_empty() || e.video_id.contains(['\t', '/', '\\']) {
                return Err(err(format!("invalid video id {:?}", e.video_id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for e in &self.entries {
            let labels = if e.labels.is_empty() { "-".to_string() } else { e.labels.join(",") };
            let partner = e.partner.as_deref().unwrap_or("-");
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.video_id, e.split, e.clips, labels, partner));
        }
        out
    }

    pub fn parse(root: &Path, subset: Subset, text: &str) -> Result<Self> {
        let path = Self::manifest_path(root, subset);
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| DataError::Manifest { path: path.clone(), line: i + 1, msg };
            let cols: Vec<&str> = line.split('\t').collect();
            if !(3..=5).contains(&cols.len()) {
                return Err(err(format!("expected 3 to 5 tab-separated columns, found {}", cols.len())));
            }
            let split = cols[1].parse().map_err(err)?;
            let clips = cols[2].parse().map_err(|_| err(format!("bad clip count {:?}", cols[2])))?;
            let labels = match cols.get(3) {
                None | Some(&"-") | Some(&"") => vec![],
                Some(l) => l.split(',').map(str::to_string).collect(),
            };
            let partner = match cols.get(4) {
                None | Some(&"-") | Some(&"") => None,
                Some(p) => Some(p.to_string()),
            };
            entries.push(ManifestEntry { video_id: cols[0].to_string(), split, clips, labels, partner });
            lines.push(i + 1);
        }
        let m = Self { root: root.to_path_buf(), subset, entries };
        m.check_lines(&lines)?;
        Ok(m)
    }

    pub fn load(root: &Path, subset: Subset) -> Result<Self> {
        let path = Self::manifest_path(root, subset);
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        Self::parse(root, subset, &text)
    }

    pub fn save(&self) -> Result<()> {
        self.check()?;
        let dir = self.subset_dir();
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let path = Self::manifest_path(&self.root, self.subset);
        fs::write(&path, self.to_text()).map_err(|e| DataError::io(&path, e))
    }
}

/// File locations relative to `<root>/<subset>/<split>/`. Placeholders:
/// `{video}`, `{t}` (0-based clip index), `{t1}` (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathTemplate {
    pub frame: String,
    pub mask: String,
    pub audio: String,
}

impl Default for PathTemplate {
    fn default() -> Self {
        Self { frame: "{video}/frames/{t}.png".into(), mask: "{video}/masks/{t}.png".into(), audio: "{video}/audio.wav".into() }
    }
}

impl PathTemplate {
    fn expand(pattern: &str, video: &str, t: usize) -> String {
        pattern.replace("{video}", video).replace("{t1}", &(t + 1).to_string()).replace("{t}", &t.to_string())
    }

    pub fn frame_path(&self, base: &Path, video: &str, t: usize) -> PathBuf {
        base.join(Self::expand(&self.frame, video, t))
    }

    pub fn mask_path(&self, base: &Path, video: &str, t: usize) -> PathBuf {
        base.join(Self::expand(&self.mask, video, t))
    }

    pub fn audio_path(&self, base: &Path, video: &str) -> PathBuf {
        base.join(Self::expand(&self.audio, video, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, split: Split) -> ManifestEntry {
        ManifestEntry { video_id: id.into(), split, clips: 5, labels: vec!["circle".into()], partner: None }
    }

    #[test]
    fn text_round_trip() {
        let mut m = DatasetManifest { root: "/data".into(), subset: Subset::MultiSource, entries: vec![entry("a", Split::Train), entry("b", Split::Test)] };
        m.entries[1].labels.clear();
        m.entries[0].partner = Some("b".into());
        let back = DatasetManifest::parse(Path::new("/data"), Subset::MultiSource, &m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn duplicate_ids_across_splits_are_rejected() {
        let text = "a\ttrain\t5\tx\nb\tvalid\t5\tx\na\ttest\t5\tx\n";
        let err = DatasetManifest::parse(Path::new("/r"), Subset::MultiSource, text).unwrap_err();
        assert!(err.to_string().contains("listed twice"), "{err}");
    }

    #[test]
    fn clip_count_must_match_subset() {
        let err = DatasetManifest::parse(Path::new("/r"), Subset::Semantic, "a\ttrain\t5\tx\n").unwrap_err();
        assert!(matches!(err, DataError::Manifest { line: 1, .. }));
    }

    #[test]
    fn template_override() {
        let t = PathTemplate { frame: "{video}/{video}_{t1}.png".into(), ..PathTemplate::default() };
        assert_eq!(t.frame_path(Path::new("/b"), "v", 0), PathBuf::from("/b/v/v_1.png"));
        assert_eq!(PathTemplate::default().mask_path(Path::new("/b"), "v", 3), PathBuf::from("/b/v/masks/3.png"));
    }
}
