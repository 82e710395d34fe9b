//! Plain-text graph bundle directories.
//!
//! A bundle directory holds:
//!
//! ```text
//! meta            n <n> / d <d> / classes <C> / seeds <k1> <k2> ...
//! edges           one "i j" pair per line, i < j, 0-based
//! features        one row of d space-separated reals per node
//! labels          one class index per line
//! splits/seed_<k> one of train|val|test per line
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces features bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{CsrGraph, GraphBundle, Role, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let splits_dir = dir.join("splits");
    fs::create_dir_all(&splits_dir).map_err(|e| Error::io(&splits_dir, e))?;

    let mut meta = String::new();
    writeln!(meta, "n {}", bundle.num_nodes()).unwrap();
    writeln!(meta, "d {}", bundle.feature_dim()).unwrap();
    writeln!(meta, "classes {}", bundle.num_classes).unwrap();
    let seeds: Vec<String> = bundle.splits.iter().map(|s| s.seed.to_string()).collect();
    writeln!(meta, "seeds {}", seeds.join(" ")).unwrap();
    write_file(&dir.join("meta"), &meta)?;

    let mut edges = String::new();
    for (i, j) in bundle.graph.edges() {
        writeln!(edges, "{i} {j}").unwrap();
    }
    write_file(&dir.join("edges"), &edges)?;

    write_matrix(&dir.join("features"), &bundle.features)?;

    let mut labels = String::new();
    for y in &bundle.labels {
        writeln!(labels, "{y}").unwrap();
    }
    write_file(&dir.join("labels"), &labels)?;

    for split in &bundle.splits {
        let mut text = String::with_capacity(split.roles.len() * 6);
        for role in &split.roles {
            text.push_str(role.as_str());
            text.push('\n');
        }
        write_file(&splits_dir.join(format!("seed_{}", split.seed)), &text)?;
    }
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let meta = Meta::read(&dir.join("meta"))?;

    let edges_path = dir.join("edges");
    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&read_file(&edges_path)?) {
        let mut it = line.split_whitespace();
        let mut index = |what: &str| -> Result<usize> {
            let tok = it
                .next()
                .ok_or_else(|| Error::parse(&edges_path, line_no, format!("missing {what} index")))?;
            let v: usize = tok
                .parse()
                .map_err(|_| Error::parse(&edges_path, line_no, format!("bad index {tok:?}")))?;
            if v >= meta.n {
                return Err(Error::parse(&edges_path, line_no, format!("index {v} >= n = {}", meta.n)));
            }
            Ok(v)
        };
        let i = index("source")?;
        let j = index("target")?;
        if it.next().is_some() {
            return Err(Error::parse(&edges_path, line_no, "expected exactly two indices"));
        }
        edges.push((i, j));
    }
    let graph = CsrGraph::from_edge_list(meta.n, &edges)?;

    let features = read_matrix(&dir.join("features"), Some((meta.n, meta.d)))?;

    let labels_path = dir.join("labels");
    let mut labels = Vec::with_capacity(meta.n);
    for (line_no, line) in data_lines(&read_file(&labels_path)?) {
        let y: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(&labels_path, line_no, format!("bad label {line:?}")))?;
        if y >= meta.classes {
            return Err(Error::parse(
                &labels_path,
                line_no,
                format!("label {y} outside [0, {})", meta.classes),
            ));
        }
        labels.push(y);
    }
    expect_count(&labels_path, labels.len(), meta.n, "labels")?;

    let mut splits = Vec::with_capacity(meta.seeds.len());
    for &seed in &meta.seeds {
        let path = dir.join("splits").join(format!("seed_{seed}"));
        let mut roles = Vec::with_capacity(meta.n);
        for (line_no, line) in data_lines(&read_file(&path)?) {
            let role = Role::parse(line.trim())
                .ok_or_else(|| Error::parse(&path, line_no, format!("unknown role {line:?}")))?;
            roles.push(role);
        }
        expect_count(&path, roles.len(), meta.n, "split roles")?;
        splits.push(Split { seed, roles });
    }

    let mut bundle = GraphBundle::new(graph, features, labels, meta.classes)?;
    bundle.splits = splits;
    Ok(bundle)
}

struct Meta {
    n: usize,
    d: usize,
    classes: usize,
    seeds: Vec<u64>,
}

impl Meta {
    fn read(path: &Path) -> Result<Meta> {
        let text = read_file(path)?;
        let (mut n, mut d, mut classes, mut seeds) = (None, None, None, None);
        for (line_no, line) in data_lines(&text) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let values: Vec<&str> = it.collect();
            let single = || -> Result<usize> {
                match values.as_slice() {
                    [v] => v
                        .parse()
                        .map_err(|_| Error::parse(path, line_no, format!("bad value for {key}: {v:?}"))),
                    _ => Err(Error::parse(path, line_no, format!("{key} takes one value"))),
                }
            };
            match key {
                "n" => n = Some(single()?),
                "d" => d = Some(single()?),
                "classes" => classes = Some(single()?),
                "seeds" => {
                    let parsed: Result<Vec<u64>> = values
                        .iter()
                        .map(|v| {
                            v.parse()
                                .map_err(|_| Error::parse(path, line_no, format!("bad seed {v:?}")))
                        })
                        .collect();
                    seeds = Some(parsed?);
                }
                other => return Err(Error::parse(path, line_no, format!("unknown key {other:?}"))),
            }
        }
        let missing = |what: &str| Error::parse(path, 0, format!("missing {what}"));
        Ok(Meta {
            n: n.ok_or_else(|| missing("n"))?,
            d: d.ok_or_else(|| missing("d"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            seeds: seeds.unwrap_or_default(),
        })
    }
}

/// Non-blank lines with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn expect_count(path: &Path, found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::parse(
            path,
            found,
            format!("expected {expected} {what}, found {found} (file truncated?)"),
        ));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one matrix row per line, entries separated by single spaces.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut text = String::with_capacity(m.rows() * m.cols() * 8);
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                text.push(' ');
            }
            write!(text, "{v}").unwrap();
        }
        text.push('\n');
    }
    write_file(path, &text)
}

/// Reads a matrix written by [`write_matrix`]. With `shape` given, the row
/// and column counts are checked against it; otherwise they are inferred.
pub fn read_matrix(path: &Path, shape: Option<(usize, usize)>) -> Result<Matrix> {
    let text = read_file(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = shape.map(|s| s.1);
    for (line_no, line) in data_lines(&text) {
        let start = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad real {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        let width = data.len() - start;
        match cols {
            Some(c) if c != width => {
                return Err(Error::parse(path, line_no, format!("expected {c} values, found {width}")));
            }
            None => cols = Some(width),
            _ => {}
        }
        rows += 1;
    }
    if let Some((n, _)) = shape {
        expect_count(path, rows, n, "rows")?;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// Converts a heterophily-benchmark `.npz` release (arrays `node_features`,
/// `node_labels`, `edges`) into a bundle. The release's own masks are
/// ignored; 48/32/20 splits are generated for `seeds`.
pub fn convert_npz(path: impl AsRef<Path>, seeds: &[u64]) -> Result<GraphBundle> {
    let path = path.as_ref();
    let mut archive = npyz::npz::NpzArchive::open(path).map_err(|e| Error::io(path, e))?;
    let mut array = |name: &str| -> Result<(Vec<u64>, Vec<f64>)> {
        let npy = archive
            .by_name(name)
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::parse(path, 0, format!("array {name:?} missing from archive")))?;
        read_npy_as_f64(npy).map_err(|msg| Error::parse(path, 0, format!("{name}: {msg}")))
    };
    let (fshape, fdata) = array("node_features")?;
    let (lshape, ldata) = array("node_labels")?;
    let (eshape, edata) = array("edges")?;
    let [n, d] = fshape[..] else {
        return Err(Error::parse(path, 0, format!("node_features has shape {fshape:?}")));
    };
    let (n, d) = (n as usize, d as usize);
    if lshape.iter().product::<u64>() as usize != n {
        return Err(Error::parse(path, 0, format!("node_labels has shape {lshape:?}")));
    }
    if eshape.len() != 2 || eshape[1] != 2 {
        return Err(Error::parse(path, 0, format!("edges has shape {eshape:?}")));
    }
    let as_index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::parse(path, 0, format!("bad index {v}")))
        }
    };
    let labels = ldata.into_iter().map(as_index).collect::<Result<Vec<_>>>()?;
    let edges = edata
        .chunks_exact(2)
        .map(|p| Ok((as_index(p[0])?, as_index(p[1])?)))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let graph = CsrGraph::from_edge_list(n, &edges)?;
    let features = Matrix::from_vec(n, d, fdata)?;
    GraphBundle::new(graph, features, labels, num_classes)?.make_splits(seeds)
}

fn read_npy_as_f64<R: Read>(npy: npyz::NpyFile<R>) -> std::result::Result<(Vec<u64>, Vec<f64>), String> {
    let shape = npy.shape().to_vec();
    let npy = match npy.try_data::<f64>() {
        Ok(r) => return collect(shape, r),
        Err(f) => f,
    };
    let npy = match npy.try_data::<f32>() {
        Ok(r) => return collect(shape, r.map(|v| v.map(f64::from))),
        Err(f) => f,
    };
    let npy = match npy.try_data::<i64>() {
        Ok(r) => return collect(shape, r.map(|v| v.map(|x| x as f64))),
        Err(f) => f,
    };
    let npy = match npy.try_data::<i32>() {
        Ok(r) => return collect(shape, r.map(|v| v.map(f64::from))),
        Err(f) => f,
    };
    Err(format!("unsupported dtype {:?}", npy.dtype()))
}

fn collect(
    shape: Vec<u64>,
    values: impl Iterator<Item = std::io::Result<f64>>,
) -> std::result::Result<(Vec<u64>, Vec<f64>), String> {
    let data = values.collect::<std::io::Result<Vec<f64>>>().map_err(|e| e.to_string())?;
    Ok((shape, data))
}

/// Location of the Chameleon-fix bundle: `$GNNFORMER_CHAMELEON` when set,
/// else `data/chameleon_fix` under the workspace root.
pub fn chameleon_bundle_dir() -> PathBuf {
    std::env::var_os("GNNFORMER_CHAMELEON")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/chameleon_fix"))
}
