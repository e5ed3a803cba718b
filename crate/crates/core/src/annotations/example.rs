//! Training-example payloads in protocol-buffer wire format.
//!
//! The message layout mirrors the usual detection `Example`:
//!
//! ```text
//! Example  { Features features = 1; }
//! Features { map<string, Feature> feature = 1; }
//! Feature  { oneof { BytesList bytes_list = 1; FloatList float_list = 2; Int64List int64_list = 3; } }
//! BytesList { repeated bytes value = 1; }
//! FloatList { repeated float value = 1 [packed]; }
//! Int64List { repeated int64 value = 1 [packed]; }
//! ```
//!
//! Map entries are emitted in ascending key order so encoding is deterministic.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::AnnotatedImage;

pub const KEY_ENCODED: &str = "image/encoded";
pub const KEY_WIDTH: &str = "image/width";
pub const KEY_HEIGHT: &str = "image/height";
pub const KEY_CLASS_TEXT: &str = "image/object/class/text";
pub const KEY_XMIN: &str = "image/object/bbox/xmin";
pub const KEY_XMAX: &str = "image/object/bbox/xmax";
pub const KEY_YMIN: &str = "image/object/bbox/ymin";
pub const KEY_YMAX: &str = "image/object/bbox/ymax";

const WIRE_VARINT: u64 = 0;
const WIRE_LEN: u64 = 2;
const WIRE_I32: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Bytes(Vec<Vec<u8>>),
    Float(Vec<f32>),
    Int64(Vec<i64>),
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("unexpected end of message")]
    Eof,
    #[error("varint overflows 64 bits")]
    VarintOverflow,
    #[error("unexpected field {field} with wire type {wire}")]
    UnexpectedField { field: u64, wire: u64 },
    #[error("feature key is not valid UTF-8")]
    BadKey,
}

/// A feature map keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Example {
    pub features: BTreeMap<String, Feature>,
}

impl Example {
    /// Builds the detection example for one image. Boxes are normalized by the
    /// image dimensions.
    pub fn from_annotated(image: &AnnotatedImage, encoded: Vec<u8>) -> Self {
        let (w, h) = (image.width as f64, image.height as f64);
        let mut features = BTreeMap::new();
        features.insert(KEY_ENCODED.to_string(), Feature::Bytes(vec![encoded]));
        features.insert(KEY_WIDTH.to_string(), Feature::Int64(vec![image.width as i64]));
        features.insert(KEY_HEIGHT.to_string(), Feature::Int64(vec![image.height as i64]));
        features.insert(
            KEY_CLASS_TEXT.to_string(),
            Feature::Bytes(
                image
                    .objects
                    .iter()
                    .map(|o| o.label.name().as_bytes().to_vec())
                    .collect(),
            ),
        );
        let norm = |f: fn(&crate::domain::BoundingBox) -> f64, scale: f64| {
            Feature::Float(
                image
                    .objects
                    .iter()
                    .map(|o| (f(&o.bbox) / scale) as f32)
                    .collect(),
            )
        };
        features.insert(KEY_XMIN.to_string(), norm(|b| b.xmin, w));
        features.insert(KEY_XMAX.to_string(), norm(|b| b.xmax, w));
        features.insert(KEY_YMIN.to_string(), norm(|b| b.ymin, h));
        features.insert(KEY_YMAX.to_string(), norm(|b| b.ymax, h));
        Self { features }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut features = Vec::new();
        for (key, feature) in &self.features {
            let mut entry = Vec::new();
            put_len_field(&mut entry, 1, key.as_bytes());
            put_len_field(&mut entry, 2, &encode_feature(feature));
            put_len_field(&mut features, 1, &entry);
        }
        let mut out = Vec::new();
        put_len_field(&mut out, 1, &features);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut example = Example::default();
        let mut outer = Cursor::new(bytes);
        while let Some((field, wire)) = outer.tag()? {
            if field != 1 || wire != WIRE_LEN {
                outer.skip(field, wire)?;
                continue;
            }
            let mut feats = Cursor::new(outer.len_delimited()?);
            while let Some((field, wire)) = feats.tag()? {
                if field != 1 || wire != WIRE_LEN {
                    feats.skip(field, wire)?;
                    continue;
                }
                let (key, feature) = decode_entry(feats.len_delimited()?)?;
                example.features.insert(key, feature);
            }
        }
        Ok(example)
    }

    pub fn bytes(&self, key: &str) -> Option<&[Vec<u8>]> {
        match self.features.get(key)? {
            Feature::Bytes(v) => Some(v),
            _ => None,
        }
    }

    pub fn floats(&self, key: &str) -> Option<&[f32]> {
        match self.features.get(key)? {
            Feature::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn ints(&self, key: &str) -> Option<&[i64]> {
        match self.features.get(key)? {
            Feature::Int64(v) => Some(v),
            _ => None,
        }
    }
}

fn encode_feature(feature: &Feature) -> Vec<u8> {
    let mut list = Vec::new();
    let field = match feature {
        Feature::Bytes(values) => {
            for v in values {
                put_len_field(&mut list, 1, v);
            }
            1
        }
        Feature::Float(values) => {
            if !values.is_empty() {
                let packed: Vec<u8> = values.iter().flat_map(|f| f.to_le_bytes()).collect();
                put_len_field(&mut list, 1, &packed);
            }
            2
        }
        Feature::Int64(values) => {
            if !values.is_empty() {
                let mut packed = Vec::new();
                for &v in values {
                    put_varint(&mut packed, v as u64);
                }
                put_len_field(&mut list, 1, &packed);
            }
            3
        }
    };
    let mut out = Vec::new();
    put_len_field(&mut out, field, &list);
    out
}

fn decode_entry(bytes: &[u8]) -> Result<(String, Feature), DecodeError> {
    let mut cur = Cursor::new(bytes);
    let mut key = String::new();
    let mut feature = Feature::Bytes(Vec::new());
    while let Some((field, wire)) = cur.tag()? {
        match (field, wire) {
            (1, WIRE_LEN) => {
                key = String::from_utf8(cur.len_delimited()?.to_vec())
                    .map_err(|_| DecodeError::BadKey)?;
            }
            (2, WIRE_LEN) => feature = decode_feature(cur.len_delimited()?)?,
            _ => cur.skip(field, wire)?,
        }
    }
    Ok((key, feature))
}

fn decode_feature(bytes: &[u8]) -> Result<Feature, DecodeError> {
    let mut cur = Cursor::new(bytes);
    let mut feature = Feature::Bytes(Vec::new());
    while let Some((field, wire)) = cur.tag()? {
        if wire != WIRE_LEN {
            cur.skip(field, wire)?;
            continue;
        }
        let mut list = Cursor::new(cur.len_delimited()?);
        feature = match field {
            1 => {
                let mut values = Vec::new();
                while let Some((f, w)) = list.tag()? {
                    match (f, w) {
                        (1, WIRE_LEN) => values.push(list.len_delimited()?.to_vec()),
                        _ => list.skip(f, w)?,
                    }
                }
                Feature::Bytes(values)
            }
            2 => {
                let mut values = Vec::new();
                while let Some((f, w)) = list.tag()? {
                    match (f, w) {
                        (1, WIRE_LEN) => {
                            let packed = list.len_delimited()?;
                            if packed.len() % 4 != 0 {
                                return Err(DecodeError::Eof);
                            }
                            values.extend(packed.chunks_exact(4).map(|c| {
                                f32::from_le_bytes([c[0], c[1], c[2], c[3]])
                            }));
                        }
                        (1, WIRE_I32) => values.push(f32::from_le_bytes(list.fixed32()?)),
                        _ => list.skip(f, w)?,
                    }
                }
                Feature::Float(values)
            }
            3 => {
                let mut values = Vec::new();
                while let Some((f, w)) = list.tag()? {
                    match (f, w) {
                        (1, WIRE_LEN) => {
                            let mut packed = Cursor::new(list.len_delimited()?);
                            while !packed.is_empty() {
                                values.push(packed.varint()? as i64);
                            }
                        }
                        (1, WIRE_VARINT) => values.push(list.varint()? as i64),
                        _ => list.skip(f, w)?,
                    }
                }
                Feature::Int64(values)
            }
            _ => continue,
        };
    }
    Ok(feature)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_len_field(out: &mut Vec<u8>, field: u64, bytes: &[u8]) {
    put_varint(out, (field << 3) | WIRE_LEN);
    put_varint(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn varint(&mut self) -> Result<u64, DecodeError> {
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let (&b, rest) = self.buf.split_first().ok_or(DecodeError::Eof)?;
            self.buf = rest;
            value |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(DecodeError::VarintOverflow)
    }

    fn tag(&mut self) -> Result<Option<(u64, u64)>, DecodeError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        let tag = self.varint()?;
        Ok(Some((tag >> 3, tag & 7)))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Eof);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn len_delimited(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.varint()? as usize;
        self.take(n)
    }

    fn fixed32(&mut self) -> Result<[u8; 4], DecodeError> {
        let b = self.take(4)?;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn skip(&mut self, field: u64, wire: u64) -> Result<(), DecodeError> {
        match wire {
            0 => self.varint().map(drop),
            1 => self.take(8).map(drop),
            2 => self.len_delimited().map(drop),
            5 => self.take(4).map(drop),
            _ => Err(DecodeError::UnexpectedField { field, wire }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, SpeciesLabel};

    #[test]
    fn varint_encoding_matches_protobuf() {
        let mut out = Vec::new();
        put_varint(&mut out, 300);
        assert_eq!(out, vec![0xac, 0x02]);
        let mut out = Vec::new();
        put_varint(&mut out, (-1i64) as u64);
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn single_int_feature_bytes() {
        let mut features = BTreeMap::new();
        features.insert("w".to_string(), Feature::Int64(vec![1]));
        let bytes = Example { features }.encode();
        // Example.features(1) -> map entry(1) -> key(1)="w", value(2) -> int64_list(3) -> packed [1]
        let expected = vec![
            0x0a, 0x0c, // features, 12 bytes
            0x0a, 0x0a, // map entry, 10 bytes
            0x0a, 0x01, b'w', // key
            0x12, 0x05, // value, 5 bytes
            0x1a, 0x03, // int64_list, 3 bytes
            0x0a, 0x01, 0x01, // packed values
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn annotated_image_round_trips_with_normalized_boxes() {
        let image = AnnotatedImage::new("a.jpg", 1024, 768)
            .unwrap()
            .with_object(
                SpeciesLabel::species("Pica pica").unwrap(),
                BoundingBox::new(10.0, 20.0, 110.0, 220.0),
            );
        let example = Example::from_annotated(&image, vec![0xff, 0xd8, 0xff]);
        let decoded = Example::decode(&example.encode()).unwrap();
        assert_eq!(decoded, example);
        assert_eq!(decoded.ints(KEY_WIDTH), Some(&[1024i64][..]));
        assert_eq!(decoded.ints(KEY_HEIGHT), Some(&[768i64][..]));
        assert_eq!(decoded.bytes(KEY_CLASS_TEXT).unwrap()[0], b"Pica pica");
        assert_eq!(decoded.floats(KEY_XMIN), Some(&[(10.0f64 / 1024.0) as f32][..]));
        assert_eq!(decoded.floats(KEY_YMAX), Some(&[(220.0f64 / 768.0) as f32][..]));
        assert_eq!(decoded.bytes(KEY_ENCODED).unwrap()[0], vec![0xff, 0xd8, 0xff]);
    }

    #[test]
    fn image_without_objects_keeps_empty_lists() {
        let image = AnnotatedImage::new("e.jpg", 10, 10).unwrap();
        let example = Example::from_annotated(&image, Vec::new());
        let decoded = Example::decode(&example.encode()).unwrap();
        assert_eq!(decoded.floats(KEY_XMIN), Some(&[][..]));
        assert_eq!(decoded.bytes(KEY_CLASS_TEXT), Some(&[][..]));
    }

    #[test]
    fn truncated_message_fails() {
        let image = AnnotatedImage::new("e.jpg", 10, 10).unwrap();
        let bytes = Example::from_annotated(&image, vec![1, 2, 3]).encode();
        assert_eq!(Example::decode(&bytes[..bytes.len() - 1]), Err(DecodeError::Eof));
    }
}
