//! Canonical byte encoding used for every hashed or signed message.
//!
//! Integers are big-endian and minimal-length (zero encodes as an empty
//! array). Every field is prefixed by its byte length as a 4-byte big-endian
//! count, and composite messages are the concatenation of their fields in
//! declared order. Nested composites are encoded as a single length-prefixed
//! field, and lists as an integer count followed by one field per element.

use num_bigint::BigUint;

/// Builder for canonical encodings.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start an encoding with a domain-separation label as its first field.
    pub fn with_domain(label: &str) -> Self {
        let mut enc = Self::new();
        enc.str(label);
        enc
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        let len = u32::try_from(data.len()).expect("canonical field exceeds 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(data);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn uint(&mut self, v: &BigUint) -> &mut Self {
        self.bytes(&minimal_be(v))
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        let raw = v.to_be_bytes();
        let skip = raw.iter().take_while(|b| **b == 0).count();
        self.bytes(&raw[skip..])
    }

    /// Nested composite, length-prefixed as one field.
    pub fn field<T: Encode + ?Sized>(&mut self, v: &T) -> &mut Self {
        let inner = v.to_canonical_bytes();
        self.bytes(&inner)
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.u64(items.len() as u64);
        for item in items {
            self.field(item);
        }
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Minimal-length big-endian bytes; zero is the empty array.
pub fn minimal_be(v: &BigUint) -> Vec<u8> {
    if v.bits() == 0 {
        Vec::new()
    } else {
        v.to_bytes_be()
    }
}

/// Types with a normative canonical encoding.
pub trait Encode {
    fn encode_into(&self, enc: &mut Encoder);

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }
}

impl Encode for [u8] {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(self);
    }
}

impl Encode for str {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self);
    }
}

impl Encode for String {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self);
    }
}

impl Encode for BigUint {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.uint(self);
    }
}

/// Serde adapter storing big integers as lowercase hex strings.
pub mod serde_hex {
    use num_bigint::BigUint;
    use num_traits::Num;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::from_str_radix(s.trim_start_matches("0x"), 16).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_empty_field() {
        let mut enc = Encoder::new();
        enc.uint(&BigUint::from(0u32));
        assert_eq!(enc.finish(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn integers_are_minimal_big_endian() {
        let mut enc = Encoder::new();
        enc.uint(&BigUint::from(0x0102u32)).u64(0x0102);
        assert_eq!(enc.finish(), vec![0, 0, 0, 2, 1, 2, 0, 0, 0, 2, 1, 2]);
    }

    #[test]
    fn fields_concatenate_in_order() {
        let mut enc = Encoder::new();
        enc.str("ab").bytes(&[7]);
        assert_eq!(enc.finish(), vec![0, 0, 0, 2, b'a', b'b', 0, 0, 0, 1, 7]);
    }

    #[test]
    fn nested_field_is_length_prefixed() {
        let mut enc = Encoder::new();
        enc.field("xy");
        // inner = [0,0,0,2,'x','y'], wrapped once more
        assert_eq!(enc.finish(), vec![0, 0, 0, 6, 0, 0, 0, 2, b'x', b'y']);
    }
}
