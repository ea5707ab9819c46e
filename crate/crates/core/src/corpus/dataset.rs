//! A complete generated corpus bundle and its on-disk layout.
//!
//! ```text
//! mono/<tag>.txt
//! parallel/<pivot>-<tag>.{src,tgt,align}
//! heldout/<pivot>-<tag>.{src,tgt,align}
//! probe/<pivot>.txt
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::text::{format_alignments, format_sentences, read_alignments, read_sentences, write_text};
use super::{
    derive_rng, generate_base_sentences, generate_corpus, generate_parallel, CorpusConfig, LanguageSpec,
    MonoCorpus, ParallelCorpus, Sentence, SentencePair, Vocabulary,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: CorpusConfig,
    pub seed: u64,
    pub specs: Vec<LanguageSpec>,
    pub vocab: Vocabulary,
    pub mono: Vec<MonoCorpus>,
    /// Training pairs `(pivot, l)` for every language with a parallel budget.
    pub parallel: Vec<ParallelCorpus>,
    /// Evaluation pairs `(pivot, l)` for every non-pivot language.
    pub held_out: Vec<ParallelCorpus>,
    /// Pivot-language sentences for fitting the tagging probe.
    pub probe: Vec<Sentence>,
}

impl Dataset {
    pub fn generate(config: &CorpusConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.language_specs(seed);
        let shape = config.sentence_shape();
        let vocab = Vocabulary::new(config.concepts, specs.iter().map(|s| s.tag.clone()).collect());
        let pivot = &specs[0];
        let mono = specs
            .iter()
            .map(|s| MonoCorpus {
                lang: s.index,
                sentences: generate_corpus(s, &shape, seed),
            })
            .collect();
        let parallel = specs[1..]
            .iter()
            .filter(|s| s.parallel_size > 0)
            .map(|s| generate_parallel(pivot, s, s.parallel_size, &shape, seed, "parallel"))
            .collect();
        let held_out = specs[1..]
            .iter()
            .map(|s| generate_parallel(pivot, s, config.held_out, &shape, seed, "heldout"))
            .collect();
        let mut rng = derive_rng(seed, &["probe", &pivot.tag]);
        let probe = generate_base_sentences(&shape, config.probe_train, &mut rng)
            .iter()
            .map(|b| pivot.realize(b).0)
            .collect();
        Ok(Dataset {
            config: config.clone(),
            seed,
            specs,
            vocab,
            mono,
            parallel,
            held_out,
            probe,
        })
    }

    pub fn pivot(&self) -> &LanguageSpec {
        &self.specs[0]
    }

    /// Relative path and contents of every file in the bundle, in a fixed order.
    pub fn files(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for m in &self.mono {
            out.push((format!("mono/{}.txt", self.vocab.tags[m.lang]), format_sentences(&m.sentences, &self.vocab)));
        }
        for (dir, group) in [("parallel", &self.parallel), ("heldout", &self.held_out)] {
            for p in group {
                let stem = format!("{dir}/{}", self.pair_stem(p));
                let xs: Vec<Sentence> = p.pairs.iter().map(|q| q.x.clone()).collect();
                let ys: Vec<Sentence> = p.pairs.iter().map(|q| q.y.clone()).collect();
                let links: Vec<_> = p.pairs.iter().map(|q| q.gold_alignment.clone().unwrap_or_default()).collect();
                out.push((format!("{stem}.src"), format_sentences(&xs, &self.vocab)));
                out.push((format!("{stem}.tgt"), format_sentences(&ys, &self.vocab)));
                out.push((format!("{stem}.align"), format_alignments(&links)));
            }
        }
        out.push((format!("probe/{}.txt", self.pivot().tag), format_sentences(&self.probe, &self.vocab)));
        out
    }

    fn pair_stem(&self, p: &ParallelCorpus) -> String {
        format!("{}-{}", self.vocab.tags[p.src], self.vocab.tags[p.tgt])
    }

    /// `(relative path, sha256 hex)` of every file, without touching disk.
    pub fn file_digests(&self) -> Vec<(String, String)> {
        self.files()
            .into_iter()
            .map(|(rel, text)| (rel, hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }

    /// Writes every file and returns `(relative path, sha256 hex)` for each.
    pub fn write(&self, dir: &Path) -> Result<Vec<(String, String)>> {
        self.files()
            .into_iter()
            .map(|(rel, text)| {
                write_text(&dir.join(&rel), &text)?;
                Ok((rel, hex::encode(Sha256::digest(text.as_bytes()))))
            })
            .collect()
    }

    /// Reads a bundle written by [`Dataset::write`] for the same config and seed.
    pub fn read(dir: &Path, config: &CorpusConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.language_specs(seed);
        let vocab = Vocabulary::new(config.concepts, specs.iter().map(|s| s.tag.clone()).collect());
        let check_lang = |s: &[Sentence], lang: usize, what: &str| -> Result<()> {
            if s.iter().any(|x| x.lang != lang) {
                return Err(Error::Data(format!("{what}: sentence in the wrong language")));
            }
            Ok(())
        };
        let mut mono = Vec::new();
        for s in &specs {
            let sentences = read_sentences(&dir.join(format!("mono/{}.txt", s.tag)), &vocab)?;
            check_lang(&sentences, s.index, &s.tag)?;
            mono.push(MonoCorpus { lang: s.index, sentences });
        }
        let read_pairs = |sub: &str, tgt: &LanguageSpec| -> Result<ParallelCorpus> {
            let stem = dir.join(format!("{sub}/{}-{}", specs[0].tag, tgt.tag));
            let with = |ext: &str| stem.with_extension(ext);
            let xs = read_sentences(&with("src"), &vocab)?;
            let ys = read_sentences(&with("tgt"), &vocab)?;
            let links = read_alignments(&with("align"))?;
            if xs.len() != ys.len() || xs.len() != links.len() {
                return Err(Error::Data(format!(
                    "{}: {} source, {} target and {} alignment lines",
                    stem.display(),
                    xs.len(),
                    ys.len(),
                    links.len()
                )));
            }
            check_lang(&xs, 0, "parallel source")?;
            check_lang(&ys, tgt.index, "parallel target")?;
            let pairs = xs
                .into_iter()
                .zip(ys)
                .zip(links)
                .map(|((x, y), l)| SentencePair {
                    x,
                    y,
                    gold_alignment: Some(l),
                    is_parallel: true,
                })
                .collect();
            Ok(ParallelCorpus {
                src: 0,
                tgt: tgt.index,
                pairs,
            })
        };
        let mut parallel = Vec::new();
        for s in specs[1..].iter().filter(|s| s.parallel_size > 0) {
            parallel.push(read_pairs("parallel", s)?);
        }
        let mut held_out = Vec::new();
        for s in &specs[1..] {
            held_out.push(read_pairs("heldout", s)?);
        }
        let probe = read_sentences(&dir.join(format!("probe/{}.txt", specs[0].tag)), &vocab)?;
        check_lang(&probe, 0, "probe")?;
        Ok(Dataset {
            config: config.clone(),
            seed,
            specs,
            vocab,
            mono,
            parallel,
            held_out,
            probe,
        })
    }

    pub fn training_data(&self) -> crate::trainer::TrainingData {
        crate::trainer::TrainingData {
            vocab: self.vocab.clone(),
            mono: self.mono.clone(),
            parallel: self.parallel.clone(),
            smoothing: self.config.smoothing,
        }
    }
}
