//! Writes small, valid HPROF files for tests and demos.
//!
//! [`FixtureSpec::generate`] returns the bytes together with the instance
//! counts the parser must recover, so fixtures double as exact oracles.

use std::collections::BTreeMap;

use crate::numerics::Prng;

pub struct HprofWriter {
    id_size: u32,
    buf: Vec<u8>,
}

pub struct SegmentWriter {
    id_size: u32,
    buf: Vec<u8>,
}

fn put_id(buf: &mut Vec<u8>, id_size: u32, id: u64) {
    if id_size == 4 {
        let narrow = u32::try_from(id).expect("id does not fit in 4 bytes");
        buf.extend_from_slice(&narrow.to_be_bytes());
    } else {
        buf.extend_from_slice(&id.to_be_bytes());
    }
}

/// Width in bytes of a basic type code.
pub fn basic_type_width(ty: u8, id_size: u32) -> usize {
    match ty {
        2 => id_size as usize,
        4 | 8 => 1,
        5 | 9 => 2,
        6 | 10 => 4,
        7 | 11 => 8,
        _ => panic!("unknown basic type {ty}"),
    }
}

impl HprofWriter {
    pub fn new(id_size: u32) -> Self {
        Self::with_version(id_size, "JAVA PROFILE 1.0.3")
    }

    pub fn with_version(id_size: u32, version: &str) -> Self {
        assert!(id_size == 4 || id_size == 8, "id size must be 4 or 8");
        let mut buf = Vec::new();
        buf.extend_from_slice(version.as_bytes());
        buf.push(0);
        buf.extend_from_slice(&id_size.to_be_bytes());
        buf.extend_from_slice(&1_500_000_000_000u64.to_be_bytes());
        HprofWriter { id_size, buf }
    }

    pub fn id_size(&self) -> u32 {
        self.id_size
    }

    pub fn raw_record(&mut self, tag: u8, body: &[u8]) {
        self.buf.push(tag);
        self.buf.extend_from_slice(&0u32.to_be_bytes());
        let len = u32::try_from(body.len()).expect("record too long");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(body);
    }

    /// Appends bytes verbatim, outside any record.
    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn string(&mut self, id: u64, text: &str) {
        let mut body = Vec::new();
        put_id(&mut body, self.id_size, id);
        body.extend_from_slice(text.as_bytes());
        self.raw_record(0x01, &body);
    }

    pub fn load_class(&mut self, serial: u32, class_id: u64, name_id: u64) {
        let mut body = Vec::new();
        body.extend_from_slice(&serial.to_be_bytes());
        put_id(&mut body, self.id_size, class_id);
        body.extend_from_slice(&0u32.to_be_bytes());
        put_id(&mut body, self.id_size, name_id);
        self.raw_record(0x02, &body);
    }

    /// A STACK TRACE record, which the parser skips by length.
    pub fn stack_trace(&mut self, serial: u32, frames: &[u64]) {
        let mut body = Vec::new();
        body.extend_from_slice(&serial.to_be_bytes());
        body.extend_from_slice(&1u32.to_be_bytes());
        body.extend_from_slice(&(frames.len() as u32).to_be_bytes());
        for &f in frames {
            put_id(&mut body, self.id_size, f);
        }
        self.raw_record(0x05, &body);
    }

    pub fn heap_dump(&mut self, f: impl FnOnce(&mut SegmentWriter)) {
        self.dump(0x0C, f);
    }

    pub fn heap_dump_segment(&mut self, f: impl FnOnce(&mut SegmentWriter)) {
        self.dump(0x1C, f);
    }

    pub fn heap_dump_end(&mut self) {
        self.raw_record(0x2C, &[]);
    }

    fn dump(&mut self, tag: u8, f: impl FnOnce(&mut SegmentWriter)) {
        let mut seg = SegmentWriter {
            id_size: self.id_size,
            buf: Vec::new(),
        };
        f(&mut seg);
        self.raw_record(tag, &seg.buf);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

impl SegmentWriter {
    fn id(&mut self, id: u64) {
        put_id(&mut self.buf, self.id_size, id);
    }

    fn u4(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn instance(&mut self, obj: u64, class_id: u64, fields: &[u8]) {
        self.buf.push(0x21);
        self.id(obj);
        self.u4(0);
        self.id(class_id);
        self.u4(fields.len() as u32);
        self.buf.extend_from_slice(fields);
    }

    /// Writes a root subrecord of the given tag with placeholder payload.
    pub fn root(&mut self, tag: u8, obj: u64) {
        self.buf.push(tag);
        self.id(obj);
        match tag {
            0xFF | 0x05 | 0x07 | 0x89 | 0x8A | 0x8B | 0x8C | 0x8D | 0x90 => {}
            0x01 => self.id(obj + 1),
            0x02 | 0x03 | 0x08 | 0x8E => {
                self.u4(1);
                self.u4(2);
            }
            0x04 | 0x06 => self.u4(1),
            _ => panic!("0x{tag:02X} is not a root tag"),
        }
    }

    pub fn heap_dump_info(&mut self, heap_id: u32, name_id: u64) {
        self.buf.push(0xFE);
        self.u4(heap_id);
        self.id(name_id);
    }

    pub fn primitive_array_nodata(&mut self, obj: u64, len: u32, ty: u8) {
        self.buf.push(0xC3);
        self.id(obj);
        self.u4(0);
        self.u4(len);
        self.buf.push(ty);
    }

    /// CLASS DUMP with one constant-pool entry, one static per `statics`
    /// type code and one instance field per `fields` type code.
    pub fn class_dump(&mut self, class_id: u64, name_id: u64, statics: &[u8], fields: &[u8]) {
        self.buf.push(0x20);
        self.id(class_id);
        self.u4(0);
        for _ in 0..6 {
            self.id(0);
        }
        let instance_size: usize = fields
            .iter()
            .map(|&t| basic_type_width(t, self.id_size))
            .sum();
        self.u4(instance_size as u32);
        self.buf.extend_from_slice(&1u16.to_be_bytes());
        self.buf.extend_from_slice(&0u16.to_be_bytes());
        self.buf.push(10);
        self.u4(42);
        self.buf
            .extend_from_slice(&(statics.len() as u16).to_be_bytes());
        for &ty in statics {
            self.id(name_id);
            self.buf.push(ty);
            let w = basic_type_width(ty, self.id_size);
            self.buf.extend(std::iter::repeat_n(0xAB, w));
        }
        self.buf
            .extend_from_slice(&(fields.len() as u16).to_be_bytes());
        for &ty in fields {
            self.id(name_id);
            self.buf.push(ty);
        }
    }

    pub fn object_array(&mut self, obj: u64, elem_class: u64, elements: &[u64]) {
        self.buf.push(0x22);
        self.id(obj);
        self.u4(0);
        self.u4(elements.len() as u32);
        self.id(elem_class);
        for &e in elements {
            self.id(e);
        }
    }

    pub fn primitive_array(&mut self, obj: u64, ty: u8, len: u32) {
        assert_ne!(ty, 2, "object arrays use object_array");
        self.buf.push(0x23);
        self.id(obj);
        self.u4(0);
        self.u4(len);
        self.buf.push(ty);
        let w = basic_type_width(ty, self.id_size);
        self.buf.extend(std::iter::repeat_n(0x5A, w * len as usize));
    }
}

const ROOT_TAGS: [u8; 16] = [
    0xFF, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x89, 0x8A, 0x8B, 0x8C, 0x8D, 0x8E, 0x90,
];
const PRIMITIVE_TYPES: [u8; 8] = [4, 5, 6, 7, 8, 9, 10, 11];
const ALL_TYPES: [u8; 9] = [2, 4, 5, 6, 7, 8, 9, 10, 11];

/// Manifest of classes and how many instances of each to emit.
#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub id_size: u32,
    pub classes: Vec<(String, u64)>,
    /// Number of HEAP DUMP SEGMENT records the instances are spread over.
    pub segments: usize,
    /// Emit class names in JVM internal form (`a/b/C`).
    pub internal_names: bool,
}

impl FixtureSpec {
    pub fn new(id_size: u32, classes: Vec<(String, u64)>) -> Self {
        FixtureSpec {
            id_size,
            classes,
            segments: 3,
            internal_names: false,
        }
    }

    /// Builds the file. Instances are shuffled and dealt across segments,
    /// interleaved with roots, arrays, class dumps and skippable records.
    /// Returns the bytes and the expected dotted-name instance counts.
    pub fn generate(&self, seed: u64) -> (Vec<u8>, BTreeMap<String, u64>) {
        let mut rng = Prng::new(seed);
        let mut w = HprofWriter::new(self.id_size);
        let segments = self.segments.max(1);

        let field_name = 1u64;
        w.string(field_name, "value");
        w.stack_trace(1, &[]);
        let mut manifest = BTreeMap::new();
        let mut class_ids = Vec::new();
        for (i, (name, count)) in self.classes.iter().enumerate() {
            let name_id = 0x1000 + i as u64;
            let class_id = 0x10_0000 + 0x10 * i as u64;
            let text = if self.internal_names {
                name.replace('.', "/")
            } else {
                name.clone()
            };
            w.string(name_id, &text);
            w.load_class(i as u32 + 1, class_id, name_id);
            class_ids.push(class_id);
            if *count > 0 {
                *manifest.entry(name.clone()).or_insert(0) += count;
            }
        }

        let mut objects: Vec<u64> = Vec::new();
        for (i, (_, count)) in self.classes.iter().enumerate() {
            objects.extend(std::iter::repeat_n(class_ids[i], *count as usize));
        }
        rng.shuffle(&mut objects);

        let per = objects.len().div_ceil(segments).max(1);
        let mut chunks: Vec<&[u64]> = objects.chunks(per).collect();
        chunks.resize(segments, &[]);
        let mut next_obj = 0x4000_0000u64;
        for (s, chunk) in chunks.iter().enumerate() {
            if s == 1 {
                w.stack_trace(2, &[7, 8]);
            }
            w.heap_dump_segment(|seg| {
                seg.heap_dump_info(s as u32, field_name);
                for (k, &tag) in ROOT_TAGS.iter().enumerate() {
                    if rng.below(2) == 0 || k == s {
                        seg.root(tag, next_obj + k as u64);
                    }
                }
                if s == 0 {
                    for (i, &cid) in class_ids.iter().enumerate() {
                        let n = 1 + i % 3;
                        let statics: Vec<u8> = (0..n).map(|j| ALL_TYPES[(i + j) % 9]).collect();
                        seg.class_dump(cid, field_name, &statics, &ALL_TYPES[..n + 1]);
                    }
                }
                for &cid in chunk.iter() {
                    next_obj += 1;
                    let n_fields = rng.below(12);
                    let fields: Vec<u8> = (0..n_fields).map(|_| rng.below(256) as u8).collect();
                    seg.instance(next_obj, cid, &fields);
                    match rng.below(4) {
                        0 => {
                            let ty = PRIMITIVE_TYPES[rng.below(8)];
                            seg.primitive_array(next_obj + 1, ty, rng.below(6) as u32);
                        }
                        1 => seg.object_array(next_obj + 1, cid, &[next_obj, 0]),
                        2 => seg.primitive_array_nodata(next_obj + 1, 9, 10),
                        _ => {}
                    }
                    next_obj += 1;
                }
            });
        }
        w.heap_dump_end();
        (w.finish(), manifest)
    }
}
