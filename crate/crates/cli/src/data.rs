use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use sage_core::autodiff::Tensor;
use sage_core::datagen::Split;
use sage_core::graph::{read_edges, read_features, read_ids, read_labels, write_features, Graph, LabelSet};
use sage_core::{Result, SageError};

use crate::manifest::RunManifest;

/// Where a graph lives: a directory written by `sage gen`, or explicit files.
#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Dataset directory holding ids.txt, edges.tsv and features.bin.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Edge list, one `u<TAB>v` per line.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Binary feature matrix.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Node ids in feature-row order; defaults to ids.txt next to the edges.
    #[arg(long)]
    pub ids: Option<PathBuf>,
}

impl GraphArgs {
    fn resolve(&self, flag: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        if let Some(d) = &self.data {
            return Ok(d.join(file));
        }
        if file == "ids.txt" {
            if let Some(e) = &self.graph {
                return Ok(e.with_file_name("ids.txt"));
            }
        }
        Err(SageError::InvalidConfig(format!("no path for {file}: pass --data or the explicit flag")))
    }

    /// Optional file inside `--data`, overridden by `flag`.
    pub fn sibling(&self, flag: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.data.as_ref().map(|d| d.join(file)).filter(|p| p.exists()))
    }

    pub fn load(&self, manifest: &mut RunManifest) -> Result<Graph> {
        let ids = self.resolve(&self.ids, "ids.txt")?;
        let edges = self.resolve(&self.graph, "edges.tsv")?;
        let features = self.resolve(&self.features, "features.bin")?;
        for p in [&ids, &edges, &features] {
            manifest.input(p)?;
        }
        Graph::build(
            read_ids(open(&ids)?)?,
            &read_edges(open(&edges)?)?,
            read_features(open(&features)?)?,
        )
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| SageError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn labels(path: &Path, g: &Graph, manifest: &mut RunManifest) -> Result<LabelSet> {
    manifest.input(path)?;
    read_labels(open(path)?, g, None, None)
}

/// `id<TAB>role` lines with role train, val or test.
pub fn read_split(path: &Path, g: &Graph, manifest: &mut RunManifest) -> Result<Split> {
    manifest.input(path)?;
    let mut split = Split::default();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |msg: String| SageError::Parse { line: i + 1, msg };
        let (id, role) = line.split_once('\t').ok_or_else(|| parse(format!("expected `id<TAB>role`, got `{line}`")))?;
        let v = g.index_of(id).ok_or_else(|| SageError::UnknownNode(id.into()))?;
        match role.trim() {
            "train" => split.train.push(v),
            "val" => split.val.push(v),
            "test" => split.test.push(v),
            r => return Err(parse(format!("unknown role `{r}`"))),
        }
    }
    Ok(split)
}

/// Node indices for the ids listed in `path`.
pub fn node_list(path: &Path, g: &Graph, manifest: &mut RunManifest) -> Result<Vec<usize>> {
    manifest.input(path)?;
    read_ids(open(path)?)?
        .iter()
        .map(|id| g.index_of(id).ok_or_else(|| SageError::UnknownNode(id.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Bin,
}

/// Embedding rows keyed by node id.
pub struct Embeddings {
    pub ids: Vec<String>,
    pub z: Tensor<f32>,
}

/// `id<TAB>x1<TAB>...`, or the binary matrix with ids in `<out>.ids.txt`.
/// Returns every file written.
pub fn write_embeddings(out: &Path, e: &Embeddings, format: Format) -> Result<Vec<PathBuf>> {
    let mut buf = Vec::new();
    match format {
        Format::Tsv => {
            for (i, id) in e.ids.iter().enumerate() {
                write!(buf, "{id}")?;
                for x in e.z.row(i) {
                    write!(buf, "\t{x}")?;
                }
                writeln!(buf)?;
            }
            crate::manifest::write_atomic(out, &buf)?;
            Ok(vec![out.to_path_buf()])
        }
        Format::Bin => {
            write_features(&mut buf, &e.z)?;
            crate::manifest::write_atomic(out, &buf)?;
            let ids = ids_path(out);
            let mut w = BufWriter::new(Vec::new());
            sage_core::graph::write_ids(&mut w, &e.ids)?;
            crate::manifest::write_atomic(&ids, &w.into_inner().map_err(|e| e.into_error())?)?;
            Ok(vec![out.to_path_buf(), ids])
        }
    }
}

/// `out` with `suffix` appended to the whole file name.
pub fn sibling_path(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ids_path(out: &Path) -> PathBuf {
    sibling_path(out, ".ids.txt")
}

/// Reads either embedding format, guessing from the file's first bytes.
pub fn read_embeddings(path: &Path, manifest: &mut RunManifest) -> Result<Embeddings> {
    manifest.input(path)?;
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(sage_core::graph::FEATURE_MAGIC) {
        let ids_file = ids_path(path);
        manifest.input(&ids_file)?;
        let ids = read_ids(open(&ids_file)?)?;
        let z = read_features(&bytes[..])?;
        if ids.len() != z.rows() {
            return Err(SageError::LengthMismatch { what: "embedding ids", expected: z.rows(), got: ids.len() });
        }
        return Ok(Embeddings { ids, z });
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut cols = None;
    for (i, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or_default().to_string();
        let row = parts
            .map(|x| x.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| SageError::Parse { line: i + 1, msg: e.to_string() })?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(SageError::Parse { line: i + 1, msg: "ragged embedding row".into() });
        }
        ids.push(id);
        data.extend(row);
    }
    let z = Tensor::from_vec(ids.len(), cols.unwrap_or(0), data)?;
    Ok(Embeddings { ids, z })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let e = Embeddings {
            ids: vec!["a".into(), "b".into()],
            z: Tensor::from_vec(2, 3, vec![0.1, -2.5e-8, 3.0, f32::MIN_POSITIVE, 1.0 / 3.0, -0.0]).unwrap(),
        };
        for (name, format) in [("z.tsv", Format::Tsv), ("z.bin", Format::Bin)] {
            let p = dir.path().join(name);
            write_embeddings(&p, &e, format).unwrap();
            let back = read_embeddings(&p, &mut RunManifest::new("t", 0, 1)).unwrap();
            assert_eq!(back.ids, e.ids);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back.z), bits(&e.z), "{name}");
        }
    }
}
