//! Dataset manifests: CSV with header `object_id,mesh_path,class_label,split`.
//! Relative mesh paths are resolved against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spnet_core::{parse_obj, parse_off, TriangleMesh};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub object_id: String,
    pub mesh_path: PathBuf,
    pub class_label: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Sorted distinct class labels; a record's class index is its position here.
    pub classes: Vec<String>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Self {
        let classes: BTreeSet<&str> = records.iter().map(|r| r.class_label.as_str()).collect();
        let classes = classes.into_iter().map(String::from).collect();
        Manifest { records, classes }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).at(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&text[..]);
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in reader.deserialize::<Record>().enumerate() {
            let line = i + 2;
            let err = |msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
            let mut rec = row.map_err(|e| err(e.to_string()))?;
            if rec.object_id.is_empty() || rec.object_id.contains(['/', '\\']) || rec.object_id.starts_with('.') {
                return Err(err(format!("invalid object id {:?}", rec.object_id)));
            }
            if !seen.insert(rec.object_id.clone()) {
                return Err(err(format!("duplicate object id {}", rec.object_id)));
            }
            if rec.mesh_path.is_relative() {
                rec.mesh_path = base.join(&rec.mesh_path);
            }
            if !rec.mesh_path.is_file() {
                return Err(err(format!("mesh file {} does not exist", rec.mesh_path.display())));
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::Manifest { path: path.to_path_buf(), line: 1, msg: "no records".into() });
        }
        Ok(Manifest::new(records))
    }

    pub fn save(&self, path: &Path, relative_to: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            let rel = r.mesh_path.strip_prefix(relative_to).unwrap_or(&r.mesh_path);
            let rec = Record { mesh_path: rel.to_path_buf(), ..r.clone() };
            w.serialize(rec).map_err(|e| Error::Setting(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Setting(e.to_string()))?;
        crate::formats::write_atomic(path, &bytes)
    }

    pub fn class_index(&self, record: &Record) -> usize {
        self.classes.binary_search(&record.class_label).expect("class list built from records")
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Parses an OFF or OBJ file (by extension, OFF otherwise) and tags it with
/// the record's id and label.
pub fn load_mesh(record: &Record) -> Result<TriangleMesh> {
    let bytes = fs::read(&record.mesh_path).at(&record.mesh_path)?;
    let is_obj = record.mesh_path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    let mesh = if is_obj { parse_obj(&bytes) } else { parse_off(&bytes) };
    Ok(mesh?.with_id(record.object_id.clone()).with_label(record.class_label.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let m = write(
            dir.path(),
            "m.csv",
            "object_id,mesh_path,class_label,split\nb1,a.off,zeta,train\na1,a.off,alpha,test\n",
        );
        let man = Manifest::load(&m).unwrap();
        assert_eq!(man.classes, vec!["alpha", "zeta"]);
        assert_eq!(man.class_index(&man.records[0]), 1);
        assert_eq!(man.records[0].mesh_path, dir.path().join("a.off"));
        assert_eq!(man.split(Split::Test).count(), 1);
        let mesh = load_mesh(&man.records[1]).unwrap();
        assert_eq!((mesh.id(), mesh.label()), ("a1", Some("alpha")));
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let header = "object_id,mesh_path,class_label,split\n";
        for body in ["x,a.off,c,train\nx,a.off,c,test\n", "x,missing.off,c,train\n", "x,a.off,c,holdout\n", ""] {
            let m = write(dir.path(), "m.csv", &format!("{header}{body}"));
            assert!(Manifest::load(&m).is_err(), "{body:?}");
        }
    }
}
