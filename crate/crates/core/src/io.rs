//! On-disk formats: dataset directories, label files, checkpoints,
//! embedding exports and similarity dumps.
//!
//! A dataset directory holds `graphs.tsv` (one graph name per line, in
//! graph order), `labels.tsv` (one tab-separated row of dense entity indices
//! per label) and, per graph, `<name>/ent_ids.tsv`, `<name>/rel_ids.tsv`
//! (`index<TAB>id`) and `<name>/triples.tsv` (`head<TAB>relation<TAB>tail`
//! in original ids).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::dataset::AlignmentLabel;
use crate::diffmath::Tensor;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::inference::{rank_candidates, SimilarityMatrix};
use crate::kg::{KnowledgeGraph, Vocab};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MULTIEA\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows kept per query in a similarity dump.
pub const DUMP_TOP: usize = 100;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => {
            Error::data(format!("{}:{line}: {message}", path.display()))
        }
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based numbers.
fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|r| r.as_ref().map_or(true, |(_, l)| !l.trim().is_empty()))
}

// ---- id maps, labels, pairs ----

pub fn write_id_map<W: Write>(mut w: W, names: impl IntoIterator<Item = String>) -> Result<()> {
    for (i, name) in names.into_iter().enumerate() {
        writeln!(w, "{i}\t{name}")?;
    }
    Ok(())
}

/// Reads `index<TAB>id` lines; indices must run 0, 1, 2, … in order.
pub fn read_id_map<R: BufRead>(reader: R) -> Result<Vocab> {
    let mut vocab = Vocab::new();
    for item in lines(reader) {
        let (no, line) = item?;
        let (idx, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(no, "expected index<TAB>id"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| parse_err(no, format!("bad index {idx:?}")))?;
        if idx != vocab.len() {
            return Err(parse_err(no, format!("index {idx} out of order, expected {}", vocab.len())));
        }
        if !vocab.insert(name.to_owned()) {
            return Err(parse_err(no, format!("duplicate id {name:?}")));
        }
    }
    Ok(vocab)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[AlignmentLabel]) -> Result<()> {
    for l in labels {
        let row: Vec<String> = l.entities().iter().map(|e| e.to_string()).collect();
        writeln!(w, "{}", row.join("\t"))?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<AlignmentLabel>> {
    let mut out: Vec<AlignmentLabel> = Vec::new();
    for item in lines(reader) {
        let (no, line) = item?;
        let entities = line
            .split('\t')
            .map(|f| f.trim().parse::<usize>().map_err(|_| parse_err(no, format!("bad entity index {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = out.first() {
            if first.arity() != entities.len() {
                return Err(parse_err(
                    no,
                    format!("{} entities, earlier rows have {}", entities.len(), first.arity()),
                ));
            }
        }
        out.push(AlignmentLabel::new(entities));
    }
    Ok(out)
}

/// Pair-wise alignment file: `left_id<TAB>right_id` per line.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for item in lines(reader) {
        let (no, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(no, "expected left_id<TAB>right_id"));
        }
        out.push((fields[0].to_owned(), fields[1].to_owned()));
    }
    Ok(out)
}

pub fn load_labels_file(path: &Path) -> Result<Vec<AlignmentLabel>> {
    in_file(path, read_labels(open(path)?))
}

pub fn save_labels_file(path: &Path, labels: &[AlignmentLabel]) -> Result<()> {
    let mut w = create(path)?;
    write_labels(&mut w, labels)?;
    w.flush()?;
    Ok(())
}

pub fn load_pairs_file(path: &Path) -> Result<Vec<(String, String)>> {
    in_file(path, read_pairs(open(path)?))
}

pub fn load_triples_file(path: &Path) -> Result<KnowledgeGraph> {
    in_file(path, KnowledgeGraph::load(open(path)?))
}

// ---- dataset directories ----

#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub names: Vec<String>,
    pub kgs: Vec<KnowledgeGraph>,
    pub labels: Vec<AlignmentLabel>,
}

/// Files of a dataset directory, for fingerprinting.
pub fn dataset_files(dir: &Path, names: &[String]) -> Vec<PathBuf> {
    let mut out = vec![dir.join("graphs.tsv"), dir.join("labels.tsv")];
    for n in names {
        for f in ["ent_ids.tsv", "rel_ids.tsv", "triples.tsv"] {
            out.push(dir.join(n).join(f));
        }
    }
    out
}

pub fn write_dataset_dir(dir: &Path, names: &[String], kgs: &[KnowledgeGraph], labels: &[AlignmentLabel]) -> Result<()> {
    if names.len() != kgs.len() {
        return Err(Error::InvalidArgument(format!("{} names for {} graphs", names.len(), kgs.len())));
    }
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("graphs.tsv"))?;
    for n in names {
        if n.is_empty() || n.contains(['/', '\\', '\t']) {
            return Err(Error::InvalidArgument(format!("unusable graph name {n:?}")));
        }
        writeln!(w, "{n}")?;
    }
    w.flush()?;
    for (name, kg) in names.iter().zip(kgs) {
        let sub = dir.join(name);
        let mut w = create(&sub.join("ent_ids.tsv"))?;
        write_id_map(&mut w, (0..kg.entity_count()).map(|e| kg.entity_label(e)))?;
        w.flush()?;
        let mut w = create(&sub.join("rel_ids.tsv"))?;
        let relations = kg.relation_count() - usize::from(kg.is_augmented());
        write_id_map(&mut w, (0..relations).map(|r| kg.relation_label(r)))?;
        w.flush()?;
        let mut w = create(&sub.join("triples.tsv"))?;
        for t in kg.original_triples() {
            writeln!(
                w,
                "{}\t{}\t{}",
                kg.entity_label(t.head),
                kg.relation_label(t.relation),
                kg.entity_label(t.tail)
            )?;
        }
        w.flush()?;
    }
    save_labels_file(&dir.join("labels.tsv"), labels)
}

pub fn read_dataset_dir(dir: &Path) -> Result<DatasetDir> {
    let path = dir.join("graphs.tsv");
    let names: Vec<String> = in_file(
        &path,
        lines(open(&path)?).map(|r| r.map(|(_, l)| l.trim().to_owned())).collect(),
    )?;
    if names.len() < 2 {
        return Err(Error::data(format!("{}: need at least 2 graphs", path.display())));
    }
    let mut kgs = Vec::with_capacity(names.len());
    for name in &names {
        let sub = dir.join(name);
        let ents = sub.join("ent_ids.tsv");
        let rels = sub.join("rel_ids.tsv");
        let triples = sub.join("triples.tsv");
        let ents = in_file(&ents, read_id_map(open(&ents)?))?;
        let rels = in_file(&rels, read_id_map(open(&rels)?))?;
        kgs.push(in_file(&triples, KnowledgeGraph::load_with_vocab(open(&triples)?, ents, rels))?);
    }
    let labels = load_labels_file(&dir.join("labels.tsv"))?;
    Ok(DatasetDir { names, kgs, labels })
}

/// Statistics table: one row per graph plus the label count.
pub fn stats_table(names: &[String], kgs: &[KnowledgeGraph], labels: usize) -> String {
    let mut out = String::from("KG\t#Ent.\t#Rel.\t#Triples\n");
    for (n, kg) in names.iter().zip(kgs) {
        let relations = kg.relation_count() - usize::from(kg.is_augmented());
        out.push_str(&format!(
            "{n}\t{}\t{relations}\t{}\n",
            kg.entity_count(),
            kg.original_triples().count()
        ));
    }
    out.push_str(&format!("#Labels\t{labels}\n"));
    out
}

// ---- checkpoints ----

fn put_u64<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::data("checkpoint truncated"))?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::data("checkpoint size overflow"))
}

/// Little-endian binary: magic, version, d, L, graph count, per-graph
/// entity and relation counts, then every tensor in
/// [`ModelParams::tensors`] order as raw `f64`s.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u64(&mut w, params.dim())?;
    put_u64(&mut w, params.layer_count)?;
    put_u64(&mut w, params.graph_count())?;
    for (e, r) in params.entity_embeddings.iter().zip(&params.relation_embeddings) {
        put_u64(&mut w, e.rows())?;
        put_u64(&mut w, r.rows())?;
    }
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::data("checkpoint truncated"))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::data("not a checkpoint (too short)"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::data("not a checkpoint (bad magic)"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| Error::data("checkpoint truncated"))?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let dim = get_u64(&mut r)?;
    let layer_count = get_u64(&mut r)?;
    let graphs = get_u64(&mut r)?;
    if dim == 0 || graphs == 0 || graphs > 1 << 16 {
        return Err(Error::data(format!("implausible checkpoint header: d = {dim}, {graphs} graphs")));
    }
    let sizes = (0..graphs)
        .map(|_| Ok((get_u64(&mut r)?, get_u64(&mut r)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut table = |rows: usize| -> Result<Tensor> { Tensor::matrix(rows, dim, read_values(&mut r, rows * dim)?) };
    let entity_embeddings = sizes.iter().map(|&(e, _)| table(e)).collect::<Result<Vec<_>>>()?;
    let relation_embeddings = sizes.iter().map(|&(_, rel)| table(rel)).collect::<Result<Vec<_>>>()?;
    let attn_head = Tensor::vector(read_values(&mut r, dim)?);
    let attn_rel = Tensor::vector(read_values(&mut r, dim)?);
    let attn_tail = Tensor::vector(read_values(&mut r, dim)?);
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::data("trailing bytes after checkpoint"));
    }
    Ok(ModelParams {
        entity_embeddings,
        relation_embeddings,
        attn_head,
        attn_rel,
        attn_tail,
        layer_count,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut w = create(path)?;
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    in_file(path, read_checkpoint(BufReader::new(file)))
}

// ---- embeddings and similarity dumps ----

/// `entity_id<TAB>v1<TAB>…<TAB>vd` with 6 decimals.
pub fn write_embeddings<W: Write>(mut w: W, table: &Tensor, ids: impl Fn(usize) -> String) -> Result<()> {
    for i in 0..table.rows() {
        write!(w, "{}", ids(i))?;
        for v in table.row(i) {
            write!(w, "\t{v:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<(Vec<String>, Tensor)> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for item in lines(reader) {
        let (no, line) = item?;
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_owned();
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(no, format!("bad value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(no, format!("{} values, earlier rows have {w}", values.len())))
            }
            _ => {}
        }
        ids.push(id);
        data.extend(values);
    }
    let t = Tensor::matrix(ids.len(), width.unwrap_or(0), data)?;
    Ok((ids, t))
}

/// `row_entity<TAB>col_entity<TAB>value` for the best [`DUMP_TOP`] columns
/// of each row.
pub fn write_similarity_dump<W: Write>(
    mut w: W,
    s: &SimilarityMatrix,
    row_ids: impl Fn(usize) -> String,
    col_ids: impl Fn(usize) -> String,
) -> Result<()> {
    let k = DUMP_TOP.min(s.cols().len());
    if k == 0 {
        return Ok(());
    }
    let col_pos: std::collections::HashMap<usize, usize> =
        s.cols().iter().enumerate().map(|(p, &e)| (e, p)).collect();
    for (i, &row_entity) in s.rows().iter().enumerate() {
        for e in rank_candidates(s, i, k)? {
            writeln!(w, "{}\t{}\t{:.6}", row_ids(row_entity), col_ids(e), s.get(i, col_pos[&e]))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_kg() -> KnowledgeGraph {
        KnowledgeGraph::load("a\tr\tb\nb\ts\tc\n".as_bytes()).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_and_guards() {
        let kg = toy_kg().augment_self_relations().unwrap();
        let kgs = vec![kg.clone(), kg];
        let params = ModelParams::xavier(&kgs, 4, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), params);

        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut newer = buf;
        newer[8] = 9;
        assert!(read_checkpoint(newer.as_slice()).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn embeddings_round_trip_within_print_precision() {
        let raw = Tensor::matrix(2, 3, vec![0.1234567, -0.5, 0.8, 1.0, 0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &raw, |i| format!("e{i}")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("e0\t0.123457\t-0.500000\t0.800000\n"));
        let (ids, back) = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(ids, vec!["e0", "e1"]);
        assert!(back.max_abs_diff(&raw) <= 5e-7);
    }

    #[test]
    fn id_map_and_labels() {
        let mut buf = Vec::new();
        write_id_map(&mut buf, ["x".to_string(), "y".to_string()]).unwrap();
        let v = read_id_map(buf.as_slice()).unwrap();
        assert_eq!(v.get_index_of("y"), Some(1));
        assert!(read_id_map("1\tx\n".as_bytes()).is_err());
        assert!(read_id_map("0\tx\n1\tx\n".as_bytes()).is_err());

        let labels = vec![AlignmentLabel::new(vec![0, 2, 1]), AlignmentLabel::new(vec![3, 0, 0])];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), labels);
        assert!(read_labels("0\t1\n0\n".as_bytes()).is_err());
        assert!(read_pairs("a\tb\nc\n".as_bytes()).is_err());
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = std::env::temp_dir().join(format!("multiea-io-{}", std::process::id()));
        let kgs = vec![toy_kg(), KnowledgeGraph::load("x\tq\ty\ny\tq\tz\nw\tq\tx\n".as_bytes()).unwrap()];
        let labels = vec![AlignmentLabel::new(vec![0, 1]), AlignmentLabel::new(vec![2, 0])];
        let names = vec!["left".to_string(), "right".to_string()];
        write_dataset_dir(&dir, &names, &kgs, &labels).unwrap();
        let back = read_dataset_dir(&dir).unwrap();
        assert_eq!(back.names, names);
        assert_eq!(back.labels, labels);
        for (a, b) in kgs.iter().zip(&back.kgs) {
            assert_eq!(a.triples(), b.triples());
            assert_eq!(a.entity_names(), b.entity_names());
        }
        let stats = stats_table(&names, &back.kgs, labels.len());
        assert!(stats.contains("right\t4\t1\t3\n"), "{stats}");
        fs::remove_dir_all(&dir).unwrap();
        assert!(read_dataset_dir(&dir).is_err());
    }

    #[test]
    fn similarity_dump_is_sorted_per_row() {
        let s = SimilarityMatrix::new(vec![5], vec![1, 2, 3], vec![0.2, 0.9, 0.2]).unwrap();
        let mut buf = Vec::new();
        write_similarity_dump(&mut buf, &s, |e| format!("a{e}"), |e| format!("b{e}")).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "a5\tb2\t0.900000\na5\tb1\t0.200000\na5\tb3\t0.200000\n"
        );
    }
}
