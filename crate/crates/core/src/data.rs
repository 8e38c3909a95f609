//! Quadruple datasets: TSV ingestion, vocabularies, reciprocal augmentation,
//! the filtered-ranking index and deterministic synthetic graphs.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One fact as it appears in a TSV file.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawQuadruple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub timestamp: String,
}

impl RawQuadruple {
    pub fn new(head: &str, relation: &str, tail: &str, timestamp: &str) -> Self {
        RawQuadruple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            timestamp: timestamp.to_string(),
        }
    }
}

/// Indexed fact `(s, r, o, t)`. Relation indices at or above the base
/// relation count denote reciprocals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub s: usize,
    pub r: usize,
    pub o: usize,
    pub t: usize,
}

impl Quadruple {
    pub fn new(s: usize, r: usize, o: usize, t: usize) -> Self {
        Quadruple { s, r, o, t }
    }

    /// `(o, r⁻¹, s, t)` where `r⁻¹ = r + n_relations` (and back again).
    pub fn reciprocal(self, n_relations: usize) -> Self {
        let r = if self.r >= n_relations {
            self.r - n_relations
        } else {
            self.r + n_relations
        };
        Quadruple::new(self.o, r, self.s, self.t)
    }
}

pub fn parse_quadruples<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawQuadruple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if let Some(k) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(parse_err(format!("field {} is empty", k + 1)));
        }
        out.push(RawQuadruple::new(
            fields[0], fields[1], fields[2], fields[3],
        ));
    }
    Ok(out)
}

pub fn parse_quadruple_file(path: impl AsRef<Path>) -> Result<Vec<RawQuadruple>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_quadruples(BufReader::new(file), path)
}

pub fn write_quadruple_file(path: impl AsRef<Path>, quads: &[RawQuadruple]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in quads {
        writeln!(w, "{}\t{}\t{}\t{}", q.head, q.relation, q.tail, q.timestamp)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dense label ↔ index map in first-occurrence order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: Interner,
    pub relations: Interner,
    pub timestamps: Interner,
}

pub fn build_vocabulary<'a, I>(quads: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a RawQuadruple>,
{
    let mut v = Vocabulary::default();
    for q in quads {
        v.entities.intern(&q.head);
        v.relations.intern(&q.relation);
        v.entities.intern(&q.tail);
        v.timestamps.intern(&q.timestamp);
    }
    v
}

impl Vocabulary {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Base relation count `|R|` (reciprocals excluded).
    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn n_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn index(&self, q: &RawQuadruple) -> Result<Quadruple> {
        let missing = |kind: &str, label: &str| {
            Error::InvalidArgument(format!("{kind} '{label}' is not in the vocabulary"))
        };
        Ok(Quadruple {
            s: self
                .entities
                .get(&q.head)
                .ok_or_else(|| missing("entity", &q.head))?,
            r: self
                .relations
                .get(&q.relation)
                .ok_or_else(|| missing("relation", &q.relation))?,
            o: self
                .entities
                .get(&q.tail)
                .ok_or_else(|| missing("entity", &q.tail))?,
            t: self
                .timestamps
                .get(&q.timestamp)
                .ok_or_else(|| missing("timestamp", &q.timestamp))?,
        })
    }

    pub fn index_all(&self, quads: &[RawQuadruple]) -> Result<Vec<Quadruple>> {
        quads.iter().map(|q| self.index(q)).collect()
    }

    /// Label form of an indexed quadruple. Reciprocal relations render as
    /// `<label>^-1`.
    pub fn labels_of(&self, q: &Quadruple) -> Result<RawQuadruple> {
        let oob = |what, index, size| Error::IndexOutOfRange { what, index, size };
        let n_rel = self.n_relations();
        let relation = if q.r < n_rel {
            self.relations.label(q.r).map(str::to_string)
        } else {
            self.relations.label(q.r - n_rel).map(|l| format!("{l}^-1"))
        }
        .ok_or_else(|| oob("relation", q.r, 2 * n_rel))?;
        let ent = |i: usize| {
            self.entities
                .label(i)
                .map(str::to_string)
                .ok_or_else(|| oob("entity", i, self.n_entities()))
        };
        Ok(RawQuadruple {
            head: ent(q.s)?,
            relation,
            tail: ent(q.o)?,
            timestamp: self
                .timestamps
                .label(q.t)
                .map(str::to_string)
                .ok_or_else(|| oob("timestamp", q.t, self.n_timestamps()))?,
        })
    }

    /// Writes `entities.tsv`, `relations.tsv` and `timestamps.tsv` (label TAB index).
    pub fn write_tsv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, interner) in [
            ("entities.tsv", &self.entities),
            ("relations.tsv", &self.relations),
            ("timestamps.tsv", &self.timestamps),
        ] {
            let path = dir.join(name);
            let mut body = String::new();
            for (i, l) in interner.labels().iter().enumerate() {
                body.push_str(&format!("{l}\t{i}\n"));
            }
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Appends `(o, r + |R|, s, t)` after every `(s, r, o, t)`.
pub fn augment_reciprocal(quads: &[Quadruple], n_relations: usize) -> Vec<Quadruple> {
    debug_assert!(quads.iter().all(|q| q.r < n_relations));
    quads
        .iter()
        .flat_map(|&q| [q, q.reciprocal(n_relations)])
        .collect()
}

/// All known tails for each `(s, r, t)` query key.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize, usize), Vec<usize>>,
}

pub fn build_filter_index<'a, I>(quads: I) -> FilterIndex
where
    I: IntoIterator<Item = &'a Quadruple>,
{
    let mut tails: HashMap<(usize, usize, usize), Vec<usize>> = HashMap::new();
    for q in quads {
        tails.entry((q.s, q.r, q.t)).or_default().push(q.o);
    }
    for v in tails.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    FilterIndex { tails }
}

impl FilterIndex {
    /// Sorted true tails for `(s, r, t)`; empty if the key is unknown.
    pub fn true_tails(&self, s: usize, r: usize, t: usize) -> &[usize] {
        self.tails.get(&(s, r, t)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, q: &Quadruple) -> bool {
        self.true_tails(q.s, q.r, q.t).binary_search(&q.o).is_ok()
    }

    pub fn n_keys(&self) -> usize {
        self.tails.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawSplits {
    pub train: Vec<RawQuadruple>,
    pub valid: Vec<RawQuadruple>,
    pub test: Vec<RawQuadruple>,
}

impl RawSplits {
    /// Reads `train.txt`, `valid.txt`, `test.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::load(
            dir.join("train.txt"),
            dir.join("valid.txt"),
            dir.join("test.txt"),
        )
    }

    pub fn load(train: PathBuf, valid: PathBuf, test: PathBuf) -> Result<Self> {
        Ok(RawSplits {
            train: parse_quadruple_file(train)?,
            valid: parse_quadruple_file(valid)?,
            test: parse_quadruple_file(test)?,
        })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_quadruple_file(dir.join("train.txt"), &self.train)?;
        write_quadruple_file(dir.join("valid.txt"), &self.valid)?;
        write_quadruple_file(dir.join("test.txt"), &self.test)
    }

    pub fn all(&self) -> impl Iterator<Item = &RawQuadruple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Indexed splits over a transductive vocabulary (built from all three splits).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split '{s}'"))),
        }
    }
}

impl Dataset {
    pub fn from_raw(raw: &RawSplits) -> Result<Self> {
        let vocab = build_vocabulary(raw.all());
        if vocab.n_entities() == 0 {
            return Err(Error::InvalidArgument("dataset has no quadruples".into()));
        }
        Ok(Dataset {
            train: vocab.index_all(&raw.train)?,
            valid: vocab.index_all(&raw.valid)?,
            test: vocab.index_all(&raw.test)?,
            vocab,
        })
    }

    pub fn split(&self, split: Split) -> &[Quadruple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// A split with reciprocal queries added, so head prediction becomes tail prediction.
    pub fn augmented(&self, split: Split) -> Vec<Quadruple> {
        augment_reciprocal(self.split(split), self.vocab.n_relations())
    }

    /// Filter over the augmented union of all splits.
    pub fn filter_index(&self) -> FilterIndex {
        let n = self.vocab.n_relations();
        let all: Vec<Quadruple> = [Split::Train, Split::Valid, Split::Test]
            .iter()
            .flat_map(|&s| augment_reciprocal(self.split(s), n))
            .collect();
        build_filter_index(&all)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.vocab.n_entities(),
            relations: self.vocab.n_relations(),
            timestamps: self.vocab.n_timestamps(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub timestamps: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Published statistics of the standard benchmarks.
pub fn known_statistics(name: &str) -> Option<DatasetStats> {
    let s = |entities, relations, timestamps, train, valid, test| DatasetStats {
        entities,
        relations,
        timestamps,
        train,
        valid,
        test,
    };
    match name.to_ascii_lowercase().as_str() {
        "icews14" => Some(s(6_869, 230, 365, 72_826, 8_941, 8_963)),
        "icews05-15" | "icews05_15" | "icews0515" => {
            Some(s(10_094, 251, 4_017, 368_962, 46_275, 46_092))
        }
        "gdelt" => Some(s(500, 20, 366, 2_735_685, 341_961, 341_961)),
        _ => None,
    }
}

/// Errors listing every field where `observed` differs from `expected`.
pub fn check_statistics(observed: &DatasetStats, expected: &DatasetStats) -> Result<()> {
    let fields = [
        ("entities", observed.entities, expected.entities),
        ("relations", observed.relations, expected.relations),
        ("timestamps", observed.timestamps, expected.timestamps),
        ("train", observed.train, expected.train),
        ("valid", observed.valid, expected.valid),
        ("test", observed.test, expected.test),
    ];
    let diffs: Vec<String> = fields
        .iter()
        .filter(|(_, o, e)| o != e)
        .map(|(n, o, e)| format!("{n}: found {o}, expected {e}"))
        .collect();
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Statistics(diffs.join("; ")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    /// `i → (i + 1) mod n`
    Ring,
    /// `i → i + 1` for `i < n − 1`
    Chain,
    /// Ring and chain alternating over (relation, timestamp) slots.
    Mixed,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Pattern::Ring),
            "chain" => Ok(Pattern::Chain),
            "mixed" => Ok(Pattern::Mixed),
            _ => Err(Error::InvalidArgument(format!("unknown pattern '{s}'"))),
        }
    }
}

/// Builds a synthetic graph: every (relation, timestamp) slot carries the
/// pattern's edges over entities `e0..e{n-1}`. Facts are shuffled with `seed`
/// and split 80/10/10.
pub fn generate_synthetic(
    n_entities: usize,
    n_relations: usize,
    n_timestamps: usize,
    pattern: Pattern,
    seed: u64,
) -> Result<RawSplits> {
    if n_relations == 0 || n_timestamps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one relation and one timestamp".into(),
        ));
    }
    let min_entities = match pattern {
        Pattern::Chain => 2,
        Pattern::Ring | Pattern::Mixed => 3,
    };
    if n_entities < min_entities {
        return Err(Error::InvalidArgument(format!(
            "{pattern:?} pattern needs at least {min_entities} entities, got {n_entities}"
        )));
    }
    if pattern == Pattern::Mixed && n_relations * n_timestamps < 2 {
        return Err(Error::InvalidArgument(
            "mixed pattern needs at least two (relation, timestamp) slots".into(),
        ));
    }

    let mut facts = Vec::new();
    for r in 0..n_relations {
        for t in 0..n_timestamps {
            let ring = match pattern {
                Pattern::Ring => true,
                Pattern::Chain => false,
                Pattern::Mixed => (r * n_timestamps + t).is_multiple_of(2),
            };
            let edges = if ring { n_entities } else { n_entities - 1 };
            for i in 0..edges {
                facts.push(RawQuadruple {
                    head: format!("e{i}"),
                    relation: format!("r{r}"),
                    tail: format!("e{}", (i + 1) % n_entities),
                    timestamp: format!("t{t}"),
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    facts.shuffle(&mut rng);
    let n_held = facts.len() / 10;
    let test = facts.split_off(facts.len() - n_held);
    let valid = facts.split_off(facts.len() - n_held);
    Ok(RawSplits {
        train: facts,
        valid,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn parse(s: &str) -> Result<Vec<RawQuadruple>> {
        parse_quadruples(Cursor::new(s), Path::new("mem.txt"))
    }

    #[test]
    fn splits_fields_on_tabs() {
        let q = parse("A\tlikes\tB\t2014-01-01\n").unwrap();
        assert_eq!(q, vec![RawQuadruple::new("A", "likes", "B", "2014-01-01")]);
    }

    #[test]
    fn labels_may_contain_spaces_and_unicode() {
        let q = parse("South Korea\tMake statement\tCitizen (Ñ)\t2014-01-01\n").unwrap();
        assert_eq!(q[0].head, "South Korea");
        assert_eq!(q[0].tail, "Citizen (Ñ)");
    }

    #[test]
    fn malformed_line_names_its_number() {
        let err = parse("A\tr\tB\tt\nA\tr\tB\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("A\tr\t\tt\n").is_err());
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn vocabulary_counts() {
        let one = [RawQuadruple::new("a", "r", "b", "t")];
        let v = build_vocabulary(&one);
        assert_eq!(
            (v.n_entities(), v.n_relations(), v.n_timestamps()),
            (2, 1, 1)
        );
        let two = [one[0].clone(), one[0].clone()];
        assert_eq!(build_vocabulary(&two), v);
        let selfloop = [RawQuadruple::new("a", "r", "a", "t")];
        assert_eq!(build_vocabulary(&selfloop).n_entities(), 1);
    }

    #[test]
    fn augmentation_definition() {
        let out = augment_reciprocal(&[Quadruple::new(0, 0, 1, 0)], 1);
        assert_eq!(
            out,
            vec![Quadruple::new(0, 0, 1, 0), Quadruple::new(1, 1, 0, 0)]
        );
        assert!(augment_reciprocal(&[], 3).is_empty());
    }

    #[test]
    fn filter_index_groups_tails() {
        let f = build_filter_index(&[Quadruple::new(0, 0, 1, 0), Quadruple::new(0, 0, 2, 0)]);
        assert_eq!(f.true_tails(0, 0, 0), &[1, 2]);
        let g = build_filter_index(&[Quadruple::new(0, 0, 1, 0), Quadruple::new(1, 0, 2, 0)]);
        assert_eq!(g.true_tails(0, 0, 0), &[1]);
        assert_eq!(g.true_tails(1, 0, 0), &[2]);
        assert!(g.true_tails(5, 0, 0).is_empty());
    }

    #[test]
    fn ring_and_chain_sizes() {
        let ring = generate_synthetic(4, 1, 1, Pattern::Ring, 0).unwrap();
        let all: Vec<_> = ring.all().cloned().collect();
        assert_eq!(all.len(), 4);
        for i in 0..4 {
            let want =
                RawQuadruple::new(&format!("e{i}"), "r0", &format!("e{}", (i + 1) % 4), "t0");
            assert!(all.contains(&want));
        }
        let chain = generate_synthetic(4, 1, 1, Pattern::Chain, 0).unwrap();
        assert_eq!(chain.all().count(), 3);
        assert!(generate_synthetic(2, 1, 1, Pattern::Ring, 0).is_err());
        assert!(generate_synthetic(1, 1, 1, Pattern::Chain, 0).is_err());
        assert!(generate_synthetic(5, 1, 1, Pattern::Mixed, 0).is_err());
    }

    #[test]
    fn synthetic_split_sizes() {
        let d = generate_synthetic(20, 2, 4, Pattern::Ring, 7).unwrap();
        assert_eq!((d.train.len(), d.valid.len(), d.test.len()), (128, 16, 16));
        let m = generate_synthetic(20, 2, 4, Pattern::Mixed, 7).unwrap();
        assert_eq!(m.all().count(), 4 * 20 + 4 * 19);
    }

    #[test]
    fn statistics_mismatch_lists_fields() {
        let expected = known_statistics("ICEWS14").unwrap();
        assert_eq!(expected.train, 72_826);
        let mut observed = expected;
        observed.train += 1;
        observed.entities -= 1;
        let msg = check_statistics(&observed, &expected)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("train") && msg.contains("entities"));
        assert!(check_statistics(&expected, &expected).is_ok());
    }

    proptest! {
        #[test]
        fn index_then_lookup_round_trips(seed in 0u64..1000, n in 3usize..12) {
            let raw = generate_synthetic(n, 2, 3, Pattern::Mixed, seed).unwrap();
            let ds = Dataset::from_raw(&raw).unwrap();
            for (q, r) in ds.train.iter().zip(&raw.train) {
                prop_assert_eq!(&ds.vocab.labels_of(q).unwrap(), r);
            }
        }

        #[test]
        fn reciprocal_is_an_involution(s in 0usize..50, r in 0usize..10, o in 0usize..50, t in 0usize..9) {
            let q = Quadruple::new(s, r, o, t);
            let inv = q.reciprocal(10);
            prop_assert_eq!(inv.r, r + 10);
            prop_assert_eq!(inv.reciprocal(10), q);
        }

        #[test]
        fn filter_covers_every_split(seed in 0u64..500) {
            let raw = generate_synthetic(9, 2, 2, Pattern::Mixed, seed).unwrap();
            let ds = Dataset::from_raw(&raw).unwrap();
            let f = ds.filter_index();
            for split in [Split::Train, Split::Valid, Split::Test] {
                for q in ds.augmented(split) {
                    prop_assert!(f.contains(&q));
                }
            }
        }
    }
}
