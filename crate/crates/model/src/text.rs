//! Caption tokenization over a corpus-built closed vocabulary, plus a small
//! two-layer transformer that turns token sequences into per-position
//! embeddings for downstream cross-attention.
//!
//! The grammar is tiny, so tokenization is word-level: lowercase, split on
//! whitespace, with the coordinate punctuation `(` `)` `,` broken out into
//! standalone symbols while signed integers like `-3` stay whole.

use crate::layers::{attend, key_padding_mask, Ffn, LayerNorm, Mha};
use crate::ModelError;
use mage_autograd::init;
use mage_autograd::params::{BoundParams, ParamId, ParamStore};
use mage_autograd::scalar::Scalar;
use mage_autograd::tape::{Tape, Var};
use rand_chacha::ChaCha8Rng;
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Split a caption into word pieces. Coordinate punctuation becomes its own
/// token, so `"(1, -3)"` yields `( 1 , -3 )`.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for ch in chunk.chars() {
            if ch == '(' || ch == ')' || ch == ',' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Dense word-to-id map with `<pad>` fixed at 0 and `<unk>` at 1. Word ids
/// start at 2, ordered by corpus frequency (descending) then lexicographic,
/// so rebuilding on the same corpus reproduces the same map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Vocabulary {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 2))
            .collect();
        Vocabulary { words, index }
    }

    pub fn build(corpus: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Vocabulary, ModelError> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for caption in corpus {
            for word in tokenize_words(caption.as_ref()) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(ModelError::Config("empty caption corpus".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w).collect()))
    }

    /// Total id count including the two specials.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn id_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word_for(&self, id: usize) -> &str {
        match id {
            PAD_ID => "<pad>",
            UNK_ID => "<unk>",
            _ => &self.words[id - 2],
        }
    }

    /// Map a caption to padded ids of length `l_max`, truncating (with a
    /// logged warning) if the caption is longer.
    pub fn tokenize(&self, caption: &str, l_max: usize) -> TokenizedText {
        let words = tokenize_words(caption);
        if words.len() > l_max {
            log::warn!(
                "caption truncated from {} to {} tokens: {caption:?}",
                words.len(),
                l_max
            );
        }
        let mut ids = vec![PAD_ID; l_max];
        let valid_len = words.len().min(l_max);
        for (slot, word) in ids.iter_mut().zip(&words) {
            *slot = self.id_of(word).unwrap_or(UNK_ID);
        }
        TokenizedText { ids, valid_len }
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.words.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Vocabulary, D::Error> {
        Ok(Vocabulary::from_words(Vec::<String>::deserialize(d)?))
    }
}

/// Padded id sequence; `ids[valid_len..]` are all the pad id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    pub valid_len: usize,
}

impl TokenizedText {
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.valid_len).collect()
    }

    /// Same tokens re-padded to length `l` (must hold all valid tokens).
    pub fn repad(&self, l: usize) -> TokenizedText {
        assert!(l >= self.valid_len, "repad below valid length");
        let mut ids = vec![PAD_ID; l];
        ids[..self.valid_len].copy_from_slice(&self.ids[..self.valid_len]);
        TokenizedText { ids, valid_len: self.valid_len }
    }
}

struct EncoderBlock {
    ln1: LayerNorm,
    attn: Mha,
    ln2: LayerNorm,
    ffn: Ffn,
}

/// Two pre-norm transformer blocks over word + learned position embeddings,
/// with pad positions excluded from attention, then a final layer norm.
pub struct TextEncoder {
    pub word_embed: ParamId,
    pub pos_embed: ParamId,
    blocks: Vec<EncoderBlock>,
    final_ln: LayerNorm,
    pub heads: usize,
    pub l_max: usize,
}

impl TextEncoder {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        vocab_size: usize,
        d: usize,
        l_max: usize,
        heads: usize,
        n_blocks: usize,
    ) -> TextEncoder {
        let word_embed = store.register("text.word_embed", init::normal(rng, &[vocab_size, d], 0.0, 0.02));
        let pos_embed = store.register("text.pos_embed", init::normal(rng, &[l_max, d], 0.0, 0.02));
        let blocks = (0..n_blocks)
            .map(|i| EncoderBlock {
                ln1: LayerNorm::init(store, &format!("text.block{i}.ln1"), d),
                attn: Mha::init(store, rng, &format!("text.block{i}.attn"), d),
                ln2: LayerNorm::init(store, &format!("text.block{i}.ln2"), d),
                ffn: Ffn::init(store, rng, &format!("text.block{i}.ffn"), d),
            })
            .collect();
        let final_ln = LayerNorm::init(store, "text.final_ln", d);
        TextEncoder { word_embed, pos_embed, blocks, final_ln, heads, l_max }
    }

    /// Encode a batch of equally padded token sequences into `[B, L, d]`
    /// embeddings, returning the per-row valid lengths for downstream masks.
    pub fn encode<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        batch: &[TokenizedText],
    ) -> Result<(Var, Vec<usize>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Shape("empty text batch".into()));
        }
        let l = batch[0].ids.len();
        if l > self.l_max {
            return Err(ModelError::Shape(format!(
                "sequence length {l} exceeds the position table ({})",
                self.l_max
            )));
        }
        let mut flat = Vec::with_capacity(batch.len() * l);
        let mut valid = Vec::with_capacity(batch.len());
        for t in batch {
            if t.ids.len() != l {
                return Err(ModelError::Shape("ragged text batch".into()));
            }
            if t.valid_len == 0 || t.valid_len > l {
                return Err(ModelError::Shape(format!(
                    "valid length {} out of range for padded length {l}",
                    t.valid_len
                )));
            }
            flat.extend_from_slice(&t.ids);
            valid.push(t.valid_len);
        }
        let words = tape.embedding(bp.var(self.word_embed), &flat);
        let words = tape.reshape(words, &[batch.len(), l, tape.shape(words)[1]]);
        let pos_ids: Vec<usize> = (0..l).collect();
        let pos = tape.embedding(bp.var(self.pos_embed), &pos_ids);
        let x = tape.add(words, pos);
        let out = self.encode_from_embeddings(tape, bp, x, &valid);
        Ok((out, valid))
    }

    /// Transformer stack over pre-built input embeddings `[B, L, d]`.
    pub fn encode_from_embeddings<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        mut x: Var,
        valid: &[usize],
    ) -> Var {
        let l = tape.shape(x)[1];
        let mask = key_padding_mask::<F>(valid, l);
        for block in &self.blocks {
            let h = block.ln1.apply(tape, bp, x);
            let (a, _) = attend(tape, bp, &block.attn, self.heads, h, h, Some(&mask));
            x = tape.add(x, a);
            let h = block.ln2.apply(tape, bp, x);
            let f = block.ffn.apply(tape, bp, h);
            x = tape.add(x, f);
        }
        self.final_ln.apply(tape, bp, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_autograd::init::seeded_rng;
    use mage_datagen::sampler::sample_scene;
    use mage_datagen::types::{DatasetKind, Split};
    use mage_datagen::caption::{describe_scene, CaptionMode};
    use rand::SeedableRng;

    #[test]
    fn coordinates_split_into_standalone_symbols() {
        assert_eq!(
            tokenize_words("the snitch is sliding to (1, -3)"),
            ["the", "snitch", "is", "sliding", "to", "(", "1", ",", "-3", ")"]
        );
        assert_eq!(tokenize_words("The Digit 7"), ["the", "digit", "7"]);
        assert_eq!(tokenize_words(""), Vec::<String>::new());
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let vocab = Vocabulary::build(["the snitch is rotating"]).unwrap();
        assert_eq!(vocab.size(), 6);
        // All counts tie at 1, so lexicographic order decides.
        assert_eq!(vocab.id_of("is"), Some(2));
        assert_eq!(vocab.id_of("rotating"), Some(3));
        assert_eq!(vocab.id_of("snitch"), Some(4));
        assert_eq!(vocab.id_of("the"), Some(5));
        assert_eq!(vocab.id_of("cube"), None);

        let vocab = Vocabulary::build(["b a", "b c"]).unwrap();
        assert_eq!(vocab.id_of("b"), Some(2), "most frequent word ranks first");

        let rebuilt = Vocabulary::build(["the snitch is rotating"]).unwrap();
        assert_eq!(rebuilt, Vocabulary::build(["the snitch is rotating"]).unwrap());
        let json = serde_json::to_string(&rebuilt).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), rebuilt);
    }

    #[test]
    fn generated_grammar_tokenizes_without_unknowns() {
        let mut corpus = Vec::new();
        for kind in [DatasetKind::SingleMnist, DatasetKind::CaterV1, DatasetKind::CaterV2] {
            for seed in 0..80u64 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let script = sample_scene(kind, Split::Train, &mut rng);
                corpus.push(describe_scene(&script, CaptionMode::Explicit, seed));
                corpus.push(describe_scene(&script, CaptionMode::Ambiguous, seed));
            }
        }
        let vocab = Vocabulary::build(&corpus).unwrap();
        for caption in &corpus {
            let toks = vocab.tokenize(caption, 32);
            assert!(toks.valid_len > 0);
            assert!(
                toks.ids[..toks.valid_len].iter().all(|&id| id != UNK_ID),
                "unknown token in {caption:?}"
            );
            assert!(toks.ids[toks.valid_len..].iter().all(|&id| id == PAD_ID));
        }
    }

    #[test]
    fn tokenize_handles_empty_unknown_and_overlong_input() {
        let vocab = Vocabulary::build(["the snitch is rotating"]).unwrap();
        assert_eq!(vocab.tokenize("", 8).valid_len, 0);

        let toks = vocab.tokenize("the snitch is levitating", 8);
        assert_eq!(toks.valid_len, 4);
        assert_eq!(toks.ids[..4].iter().filter(|&&id| id == UNK_ID).count(), 1);

        let long = "the snitch is rotating the snitch is rotating the snitch";
        let toks = vocab.tokenize(long, 4);
        assert_eq!(toks.valid_len, 4);
        assert_eq!(toks.ids.len(), 4);
    }

    fn tiny_encoder(store: &mut ParamStore<f32>, vocab_size: usize) -> TextEncoder {
        let mut rng = seeded_rng(11);
        TextEncoder::init(store, &mut rng, vocab_size, 16, 8, 4, 2)
    }

    #[test]
    fn junk_beyond_the_valid_region_cannot_leak_into_outputs() {
        let mut store = ParamStore::<f32>::new();
        let enc = tiny_encoder(&mut store, 12);
        let clean = TokenizedText { ids: vec![4, 7, 2, 0, 0], valid_len: 3 };
        let dirty = TokenizedText { ids: vec![4, 7, 2, 9, 11], valid_len: 3 };

        let tape = Tape::new();
        let bp = store.bind(&tape);
        let (a, _) = enc.encode(&tape, &bp, std::slice::from_ref(&clean)).unwrap();
        let (b, _) = enc.encode(&tape, &bp, std::slice::from_ref(&dirty)).unwrap();
        let (av, bv) = (tape.value(a), tape.value(b));
        for pos in 0..3 {
            for c in 0..16 {
                let (x, y) = (av[[0, pos, c]], bv[[0, pos, c]]);
                assert!((x - y).abs() <= 1e-6, "leak at {pos},{c}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn single_word_caption_attends_only_to_itself() {
        let mut store = ParamStore::<f32>::new();
        let enc = tiny_encoder(&mut store, 12);
        let short = TokenizedText { ids: vec![5], valid_len: 1 };
        let padded = short.repad(6);

        let tape = Tape::new();
        let bp = store.bind(&tape);
        let (a, _) = enc.encode(&tape, &bp, std::slice::from_ref(&short)).unwrap();
        let (b, _) = enc.encode(&tape, &bp, std::slice::from_ref(&padded)).unwrap();
        let (av, bv) = (tape.value(a), tape.value(b));
        for c in 0..16 {
            assert!((av[[0, 0, c]] - bv[[0, 0, c]]).abs() <= 1e-6);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut store = ParamStore::<f32>::new();
        let enc = tiny_encoder(&mut store, 12);
        let toks = TokenizedText { ids: vec![3, 4, 5, 0], valid_len: 3 };
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let (a, _) = enc.encode(&tape, &bp, std::slice::from_ref(&toks)).unwrap();
        let (b, _) = enc.encode(&tape, &bp, std::slice::from_ref(&toks)).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn pad_position_inputs_get_exactly_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(13);
        let enc = TextEncoder::init(&mut store, &mut rng, 12, 16, 8, 4, 2);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let x = tape.leaf(init::normal(&mut rng, &[2, 5, 16], 0.0, 1.0));
        let out = enc.encode_from_embeddings(&tape, &bp, x, &[3, 4]);
        // Loss reads only the valid region of each row.
        let head = tape.slice_axis(out, 1, 0, 3);
        let loss = tape.sum(tape.square(head));
        let mut grads = tape.backward(loss);
        let gx = grads.take(x).unwrap();
        for b in 0..2 {
            let valid = [3, 4][b];
            for pos in valid..5 {
                for c in 0..16 {
                    assert_eq!(gx[[b, pos, c]], 0.0, "pad gradient leak at {b},{pos},{c}");
                }
            }
            let live: f64 = (0..valid).map(|p| (0..16).map(|c| gx[[b, p, c]].abs()).sum::<f64>()).sum();
            assert!(live > 0.0, "valid region should receive gradient");
        }
    }
}
