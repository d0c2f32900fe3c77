//! Data blocks, headers, bodies and the binary header codec.
//!
//! Header wire layout (all integers big-endian):
//!
//! ```text
//! version u32 | time u32 | merkle_root [32] | count u16 |
//! count x (origin u16 | digest [32]) | nonce u32 | signature [32]
//! ```
//!
//! Entries are sorted by origin id. The puzzle preimage is
//! `merkle_root || count || entries`, the signature covers
//! `H(encoding without signature)`, and the header digest is the hash of the
//! complete encoding.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    self, hash_bytes, hash_concat, leaf_width_bytes, merkle_root_from_leaves, CryptoError,
    Difficulty, Digest256, PublicKey, SecretKey, Signature,
};

pub type NodeId = u16;

/// Identifies a block by author and generation slot. A node produces at most
/// one block per slot, so the pair is unique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockRef {
    pub node: NodeId,
    pub seq: u32,
}

impl BlockRef {
    pub fn new(node: NodeId, seq: u32) -> BlockRef {
        BlockRef { node, seq }
    }
}

/// Bit widths used for size accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSizes {
    pub version: u64,
    pub time: u64,
    pub hash: u64,
    pub nonce: u64,
    pub signature: u64,
}

impl Default for FieldSizes {
    fn default() -> Self {
        FieldSizes { version: 32, time: 32, hash: 256, nonce: 32, signature: 256 }
    }
}

impl FieldSizes {
    /// Fixed header part: version, time, Merkle root, nonce and signature.
    pub fn fixed(&self) -> u64 {
        self.version + self.time + self.hash + self.nonce + self.signature
    }

    /// Accounting size of a header carrying `entries` digests.
    pub fn header_bits(&self, entries: usize) -> u64 {
        self.fixed() + self.hash * entries as u64
    }

    /// Accounting size of a block whose header carries `entries` digests.
    pub fn block_bits(&self, entries: usize, body_bits: u64) -> u64 {
        self.header_bits(entries) + body_bits
    }
}

/// Size of a non-genesis block for a node with `neighbor_count` neighbors:
/// the fixed header part, one digest per neighbor plus the node's own
/// previous digest, and the body.
pub fn block_size_bits(neighbor_count: usize, body_bits: u64) -> u64 {
    FieldSizes::default().block_bits(neighbor_count + 1, body_bits)
}

/// Length in bits of the binary header encoding with `entries` digests.
pub fn encoded_header_bits(entries: usize) -> u64 {
    let e = entries as u64;
    608 + 256 * e + 16 * (e + 1)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("header encoding truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after header encoding")]
    Trailing(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockHeader {
    pub version: u32,
    pub time: u32,
    pub merkle_root: Digest256,
    /// Latest known header digest per origin node, sorted by origin.
    pub digests: Vec<(NodeId, Digest256)>,
    pub nonce: u32,
    pub signature: Signature,
}

impl BlockHeader {
    fn write_unsigned(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&self.time.to_be_bytes());
        out.extend_from_slice(&self.merkle_root.0);
        write_entries(&self.digests, out);
        out.extend_from_slice(&self.nonce.to_be_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(encoded_header_bits(self.digests.len()) as usize / 8);
        self.write_unsigned(&mut out);
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<BlockHeader, CodecError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let version = r.u32()?;
        let time = r.u32()?;
        let merkle_root = Digest256(r.array()?);
        let count = r.u16()? as usize;
        r.need(count * 34)?;
        let mut digests = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.u16()?;
            digests.push((id, Digest256(r.array()?)));
        }
        let nonce = r.u32()?;
        let signature = Signature(r.array()?);
        if r.pos != bytes.len() {
            return Err(CodecError::Trailing(bytes.len() - r.pos));
        }
        Ok(BlockHeader { version, time, merkle_root, digests, nonce, signature })
    }

    /// The message the author signs: the hash of everything but the
    /// signature.
    pub fn signing_message(&self) -> Digest256 {
        let mut out = Vec::with_capacity(encoded_header_bits(self.digests.len()) as usize / 8);
        self.write_unsigned(&mut out);
        hash_bytes(&out)
    }

    /// Bytes fed to the hash puzzle (the nonce is appended by the search).
    pub fn puzzle_preimage(&self) -> Vec<u8> {
        puzzle_preimage(&self.merkle_root, &self.digests)
    }

    pub fn digest(&self) -> Digest256 {
        hash_bytes(&self.encode())
    }

    /// Digest this header records for `origin`, if any.
    pub fn get_digest(&self, origin: NodeId) -> Option<Digest256> {
        self.digests
            .binary_search_by_key(&origin, |e| e.0)
            .ok()
            .map(|i| self.digests[i].1)
    }

    pub fn contains_digest(&self, d: &Digest256) -> bool {
        self.digests.iter().any(|e| e.1 == *d)
    }

    pub fn verify_signature(&self, public: &PublicKey) -> bool {
        crypto::verify(&self.signing_message().0, &self.signature, public)
    }

    pub fn verify_puzzle(&self, difficulty: &Difficulty) -> bool {
        difficulty.is_met_by(&crypto::puzzle_digest(&self.puzzle_preimage(), self.nonce))
    }

    pub fn size_bits(&self, sizes: &FieldSizes) -> u64 {
        sizes.header_bits(self.digests.len())
    }

    /// Solves the puzzle and signs. `digests` must already be sorted.
    pub fn seal(
        version: u32,
        time: u32,
        merkle_root: Digest256,
        digests: Vec<(NodeId, Digest256)>,
        difficulty: &Difficulty,
        secret: &SecretKey,
    ) -> Result<BlockHeader, CryptoError> {
        debug_assert!(digests.windows(2).all(|w| w[0].0 < w[1].0));
        let nonce = crypto::find_nonce(&puzzle_preimage(&merkle_root, &digests), difficulty)?;
        let mut h = BlockHeader {
            version,
            time,
            merkle_root,
            digests,
            nonce,
            signature: Signature::default(),
        };
        h.signature = crypto::sign(&h.signing_message().0, secret);
        Ok(h)
    }
}

fn write_entries(digests: &[(NodeId, Digest256)], out: &mut Vec<u8>) {
    out.extend_from_slice(&(digests.len() as u16).to_be_bytes());
    for (id, d) in digests {
        out.extend_from_slice(&id.to_be_bytes());
        out.extend_from_slice(&d.0);
    }
}

pub fn puzzle_preimage(root: &Digest256, digests: &[(NodeId, Digest256)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(34 + digests.len() * 34);
    out.extend_from_slice(&root.0);
    write_entries(digests, &mut out);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn need(&self, n: usize) -> Result<(), CodecError> {
        if self.buf.len() - self.pos < n {
            Err(CodecError::Truncated { need: self.pos + n, have: self.buf.len() })
        } else {
            Ok(())
        }
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        self.need(N)?;
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        Ok(a)
    }
    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
}

/// Block payload.
///
/// Synthetic bodies are a keyed ChaCha8 byte stream that is regenerated on
/// demand, so a large run never holds its bodies in memory. Both variants
/// hash to the same root for the same content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Bytes(Vec<u8>),
    Synthetic(SyntheticBody),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticBody {
    pub key: [u8; 32],
    pub len_bytes: u64,
    /// Bit positions (MSB-first within each byte) flipped relative to the
    /// generated stream.
    pub flips: BTreeSet<u64>,
    /// Root of the untouched stream, filled in once computed.
    pub clean_root: Option<Digest256>,
}

impl Body {
    /// Pseudo-random payload of `len_bits` bits determined by
    /// `(seed, node, seq)`.
    pub fn synthetic(seed: u64, node: NodeId, seq: u32, len_bits: u64) -> Body {
        let key = hash_concat(&[
            b"2ldag/body/",
            &seed.to_be_bytes(),
            &node.to_be_bytes(),
            &seq.to_be_bytes(),
        ])
        .0;
        Body::Synthetic(SyntheticBody {
            key,
            len_bytes: len_bits / 8,
            flips: BTreeSet::new(),
            clean_root: None,
        })
    }

    pub fn len_bits(&self) -> u64 {
        match self {
            Body::Bytes(b) => b.len() as u64 * 8,
            Body::Synthetic(s) => s.len_bytes * 8,
        }
    }

    pub fn flip_bit(&mut self, bit: u64) {
        assert!(bit < self.len_bits(), "bit {bit} outside body");
        match self {
            Body::Bytes(b) => b[(bit / 8) as usize] ^= 0x80 >> (bit % 8),
            Body::Synthetic(s) => {
                if !s.flips.remove(&bit) {
                    s.flips.insert(bit);
                }
            }
        }
    }

    /// Full byte content. Only sensible for small bodies.
    pub fn materialize(&self) -> Vec<u8> {
        match self {
            Body::Bytes(b) => b.clone(),
            Body::Synthetic(s) => {
                let mut out = Vec::with_capacity(s.len_bytes as usize);
                let mut stream = SyntheticStream::new(s);
                let mut buf = vec![0u8; 4096];
                while stream.remaining > 0 {
                    let n = stream.read(&mut buf);
                    out.extend_from_slice(&buf[..n]);
                }
                out
            }
        }
    }

    pub fn merkle_root(&self, leaf_bits: u64) -> Result<Digest256, CryptoError> {
        match self {
            Body::Bytes(b) => crypto::merkle_root(b, leaf_bits),
            Body::Synthetic(s) => {
                if s.flips.is_empty() {
                    if let Some(r) = s.clean_root {
                        return Ok(r);
                    }
                }
                synthetic_root(s, leaf_bits)
            }
        }
    }

    /// Computes and caches the root of an untouched synthetic body.
    pub fn warm_root(&mut self, leaf_bits: u64) -> Result<Digest256, CryptoError> {
        if let Body::Synthetic(s) = self {
            if s.flips.is_empty() && s.clean_root.is_none() {
                s.clean_root = Some(synthetic_root(s, leaf_bits)?);
            }
        }
        self.merkle_root(leaf_bits)
    }
}

fn synthetic_root(s: &SyntheticBody, leaf_bits: u64) -> Result<Digest256, CryptoError> {
    let leaf = leaf_width_bytes(leaf_bits)?;
    if s.len_bytes == 0 {
        return Err(CryptoError::EmptyBody);
    }
    let mut stream = SyntheticStream::new(s);
    let mut buf = vec![0u8; leaf];
    let mut leaves = Vec::with_capacity(s.len_bytes.div_ceil(leaf as u64) as usize);
    while stream.remaining > 0 {
        let n = stream.read(&mut buf);
        leaves.push(hash_bytes(&buf[..n]));
    }
    merkle_root_from_leaves(leaves)
}

/// Sequential reader over a synthetic body with flips applied.
struct SyntheticStream<'a> {
    body: &'a SyntheticBody,
    rng: ChaCha8Rng,
    chunk: Vec<u8>,
    chunk_pos: usize,
    offset: u64,
    remaining: u64,
}

const STREAM_CHUNK: usize = 1 << 16;

impl<'a> SyntheticStream<'a> {
    fn new(body: &'a SyntheticBody) -> Self {
        SyntheticStream {
            body,
            rng: ChaCha8Rng::from_seed(body.key),
            chunk: Vec::new(),
            chunk_pos: 0,
            offset: 0,
            remaining: body.len_bytes,
        }
    }

    /// Fills up to `out.len()` bytes, returning how many were written.
    fn read(&mut self, out: &mut [u8]) -> usize {
        let want = (out.len() as u64).min(self.remaining) as usize;
        let mut done = 0;
        while done < want {
            if self.chunk_pos == self.chunk.len() {
                // Chunks are whole multiples of the ChaCha block, so the byte
                // stream does not depend on how reads are split.
                self.chunk.resize(STREAM_CHUNK, 0);
                self.rng.fill_bytes(&mut self.chunk);
                self.chunk_pos = 0;
            }
            let n = (want - done).min(self.chunk.len() - self.chunk_pos);
            out[done..done + n].copy_from_slice(&self.chunk[self.chunk_pos..self.chunk_pos + n]);
            self.chunk_pos += n;
            done += n;
        }
        let start_bit = self.offset * 8;
        let end_bit = start_bit + want as u64 * 8;
        for &bit in self.body.flips.range(start_bit..end_bit) {
            let rel = bit - start_bit;
            out[(rel / 8) as usize] ^= 0x80 >> (rel % 8);
        }
        self.offset += want as u64;
        self.remaining -= want as u64;
        want
    }
}

/// A stored block: header, body and its cached header digest.
#[derive(Clone, Debug)]
pub struct DataBlock {
    pub reference: BlockRef,
    header: Arc<BlockHeader>,
    pub body: Body,
    digest: Digest256,
}

impl DataBlock {
    pub fn new(reference: BlockRef, header: BlockHeader, body: Body) -> DataBlock {
        let digest = header.digest();
        DataBlock { reference, header: Arc::new(header), body, digest }
    }

    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    /// Shared handle to the header, cheap to clone into replies.
    pub fn header_arc(&self) -> Arc<BlockHeader> {
        Arc::clone(&self.header)
    }

    /// Digest of the stored header.
    pub fn digest(&self) -> Digest256 {
        self.digest
    }

    /// Mutates the header in place and refreshes the cached digest.
    pub fn modify_header(&mut self, f: impl FnOnce(&mut BlockHeader)) {
        f(Arc::make_mut(&mut self.header));
        self.digest = self.header.digest();
    }

    pub fn is_genesis(&self) -> bool {
        self.header.digests.is_empty()
    }

    pub fn size_bits(&self, sizes: &FieldSizes) -> u64 {
        self.header.size_bits(sizes) + self.body.len_bits()
    }
}
