use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read};

use super::{Diagnostics, HprofError, HprofSummary};

type Result<T> = std::result::Result<T, HprofError>;

const TAG_STRING: u8 = 0x01;
const TAG_LOAD_CLASS: u8 = 0x02;
const TAG_HEAP_DUMP: u8 = 0x0C;
const TAG_HEAP_DUMP_SEGMENT: u8 = 0x1C;

const MAX_VERSION_LEN: usize = 64;
const SUPPORTED_VERSIONS: [&str; 2] = ["JAVA PROFILE 1.0.2", "JAVA PROFILE 1.0.3"];

/// Byte width of an HPROF basic type, `None` for an unknown type code.
fn type_width(ty: u8, id_size: u64) -> Option<u64> {
    match ty {
        2 => Some(id_size),
        4 | 8 => Some(1),
        5 | 9 => Some(2),
        6 | 10 => Some(4),
        7 | 11 => Some(8),
        _ => None,
    }
}

/// Streaming reader that tracks its byte offset.
struct Input<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Input<R> {
    fn fill(&mut self, buf: &mut [u8], context: &'static str) -> Result<()> {
        let start = self.pos;
        let mut done = 0;
        while done < buf.len() {
            match self.inner.read(&mut buf[done..]) {
                Ok(0) => {
                    return Err(HprofError::Truncated {
                        offset: start,
                        context,
                    })
                }
                Ok(n) => {
                    done += n;
                    self.pos += n as u64;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(HprofError::Io {
                        offset: self.pos,
                        source,
                    })
                }
            }
        }
        Ok(())
    }

    /// Reads one byte, or `None` at a clean end of stream.
    fn try_u8(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.pos += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(HprofError::Io {
                        offset: self.pos,
                        source,
                    })
                }
            }
        }
    }

    fn u8(&mut self, ctx: &'static str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, ctx)?;
        Ok(b[0])
    }

    fn u16(&mut self, ctx: &'static str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b, ctx)?;
        Ok(u16::from_be_bytes(b))
    }

    fn u32(&mut self, ctx: &'static str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, ctx)?;
        Ok(u32::from_be_bytes(b))
    }

    fn u64(&mut self, ctx: &'static str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, ctx)?;
        Ok(u64::from_be_bytes(b))
    }

    fn id(&mut self, id_size: u64, ctx: &'static str) -> Result<u64> {
        if id_size == 4 {
            Ok(self.u32(ctx)? as u64)
        } else {
            self.u64(ctx)
        }
    }

    fn skip(&mut self, n: u64, context: &'static str) -> Result<()> {
        let start = self.pos;
        let copied =
            io::copy(&mut (&mut self.inner).take(n), &mut io::sink()).map_err(|source| {
                HprofError::Io {
                    offset: self.pos,
                    source,
                }
            })?;
        self.pos += copied;
        if copied < n {
            return Err(HprofError::Truncated {
                offset: start,
                context,
            });
        }
        Ok(())
    }

    fn bytes(&mut self, n: u64, ctx: &'static str) -> Result<Vec<u8>> {
        // Grow as data arrives so a corrupt length cannot force a huge allocation.
        let mut out = Vec::new();
        let start = self.pos;
        let got = (&mut self.inner)
            .take(n)
            .read_to_end(&mut out)
            .map_err(|source| HprofError::Io {
                offset: self.pos,
                source,
            })?;
        self.pos += got as u64;
        if (got as u64) < n {
            return Err(HprofError::Truncated {
                offset: start,
                context: ctx,
            });
        }
        Ok(out)
    }
}

/// Single-use parser over one byte stream.
pub struct HprofParser<R> {
    input: Input<R>,
    id_size: u64,
    strings: HashMap<u64, String>,
    class_names: HashMap<u64, u64>,
    instances: HashMap<u64, u64>,
    diag: Diagnostics,
}

/// Parses a complete HPROF stream.
pub fn parse_hprof<R: Read>(reader: R) -> Result<HprofSummary> {
    HprofParser::new(reader).run()
}

impl<R: Read> HprofParser<R> {
    pub fn new(reader: R) -> Self {
        HprofParser {
            input: Input {
                inner: reader,
                pos: 0,
            },
            id_size: 4,
            strings: HashMap::new(),
            class_names: HashMap::new(),
            instances: HashMap::new(),
            diag: Diagnostics::default(),
        }
    }

    pub fn run(mut self) -> Result<HprofSummary> {
        let version = self.header_version()?;
        let id_size = self.input.u32("identifier size")?;
        if id_size != 4 && id_size != 8 {
            return Err(HprofError::IdSize(id_size));
        }
        self.id_size = id_size as u64;
        let timestamp_ms = self.input.u64("timestamp")?;

        while let Some(tag) = self.input.try_u8()? {
            let record_start = self.input.pos - 1;
            let _time = self.input.u32("record time")?;
            let len = self.input.u32("record length")? as u64;
            *self.diag.records_by_tag.entry(tag).or_default() += 1;
            match tag {
                TAG_STRING => self.string_record(record_start, len)?,
                TAG_LOAD_CLASS => self.load_class_record(record_start, len)?,
                TAG_HEAP_DUMP | TAG_HEAP_DUMP_SEGMENT => self.heap_dump(len)?,
                _ => {
                    self.input.skip(len, "record body")?;
                    self.diag.skipped_records += 1;
                }
            }
        }

        let mut classes = HashMap::with_capacity(self.class_names.len());
        for (&class_id, name_id) in &self.class_names {
            match self.strings.get(name_id) {
                Some(name) => {
                    classes.insert(class_id, name.replace('/', "."));
                }
                None => self.diag.unresolved_class_names += 1,
            }
        }
        let mut instance_counts = BTreeMap::new();
        for (class_id, count) in &self.instances {
            match classes.get(class_id) {
                Some(name) => *instance_counts.entry(name.clone()).or_default() += count,
                None => self.diag.unresolved_instances += count,
            }
        }

        Ok(HprofSummary {
            version,
            identifier_size: id_size,
            timestamp_ms,
            strings: self.strings,
            classes,
            instance_counts,
            diagnostics: self.diag,
            bytes_consumed: self.input.pos,
        })
    }

    fn header_version(&mut self) -> Result<String> {
        let mut raw = Vec::new();
        loop {
            let b = self.input.u8("header")?;
            if b == 0 {
                break;
            }
            raw.push(b);
            if raw.len() > MAX_VERSION_LEN {
                return Err(HprofError::BadMagic(
                    String::from_utf8_lossy(&raw).into_owned(),
                ));
            }
        }
        let version = String::from_utf8_lossy(&raw).into_owned();
        if !SUPPORTED_VERSIONS.contains(&version.as_str()) {
            return Err(HprofError::BadMagic(version));
        }
        Ok(version)
    }

    fn string_record(&mut self, start: u64, len: u64) -> Result<()> {
        if len < self.id_size {
            return Err(HprofError::Malformed {
                offset: start,
                msg: format!("STRING record of length {len}"),
            });
        }
        let id = self.input.id(self.id_size, "string id")?;
        let text = self.input.bytes(len - self.id_size, "string text")?;
        self.strings
            .insert(id, String::from_utf8_lossy(&text).into_owned());
        Ok(())
    }

    fn load_class_record(&mut self, start: u64, len: u64) -> Result<()> {
        let need = 8 + 2 * self.id_size;
        if len < need {
            return Err(HprofError::Malformed {
                offset: start,
                msg: format!("LOAD CLASS record of length {len}, need {need}"),
            });
        }
        let _serial = self.input.u32("class serial")?;
        let class_id = self.input.id(self.id_size, "class object id")?;
        let _trace = self.input.u32("stack trace serial")?;
        let name_id = self.input.id(self.id_size, "class name id")?;
        self.input.skip(len - need, "LOAD CLASS padding")?;
        if self.class_names.insert(class_id, name_id).is_some() {
            self.diag.duplicate_class_loads += 1;
        }
        Ok(())
    }

    fn heap_dump(&mut self, len: u64) -> Result<()> {
        let end = self.input.pos + len;
        while self.input.pos < end {
            let sub_start = self.input.pos;
            let tag = self.input.u8("subrecord tag")?;
            let body = self.subrecord(tag, sub_start)?;
            if self.input.pos > end {
                return Err(HprofError::Malformed {
                    offset: sub_start,
                    msg: format!("subrecord 0x{tag:02X} overruns its heap dump record"),
                });
            }
            if !body {
                self.diag.subrecords_skipped += 1;
            }
        }
        Ok(())
    }

    /// Consumes one subrecord body. Returns `true` if it was an instance dump.
    fn subrecord(&mut self, tag: u8, offset: u64) -> Result<bool> {
        let id = self.id_size;
        let fixed = match tag {
            // ROOT UNKNOWN, STICKY CLASS, MONITOR USED and the Android roots
            // that carry only an object id.
            0xFF | 0x05 | 0x07 | 0x89 | 0x8A | 0x8B | 0x8C | 0x8D | 0x90 => id,
            0x01 => 2 * id,                      // ROOT JNI GLOBAL
            0x02 | 0x03 | 0x08 | 0x8E => id + 8, // JNI LOCAL, JAVA FRAME, THREAD OBJECT, JNI MONITOR
            0x04 | 0x06 => id + 4,               // NATIVE STACK, THREAD BLOCK
            0xFE => 4 + id,                      // Android HEAP DUMP INFO
            0xC3 => id + 9,                      // Android PRIMITIVE ARRAY NODATA
            0x20 => {
                self.class_dump()?;
                return Ok(false);
            }
            0x21 => {
                let _obj = self.input.id(id, "instance id")?;
                let _trace = self.input.u32("instance trace")?;
                let class_id = self.input.id(id, "instance class id")?;
                let n = self.input.u32("instance size")? as u64;
                self.input.skip(n, "instance fields")?;
                *self.instances.entry(class_id).or_default() += 1;
                return Ok(true);
            }
            0x22 => {
                self.input.skip(id + 4, "object array header")?;
                let n = self.input.u32("object array length")? as u64;
                self.input.skip(id + n * id, "object array body")?;
                return Ok(false);
            }
            0x23 => {
                self.input.skip(id + 4, "primitive array header")?;
                let n = self.input.u32("primitive array length")? as u64;
                let ty = self.input.u8("primitive array type")?;
                let w = type_width(ty, id)
                    .filter(|_| ty != 2)
                    .ok_or(HprofError::Malformed {
                        offset,
                        msg: format!("primitive array of type {ty}"),
                    })?;
                self.input.skip(n * w, "primitive array body")?;
                return Ok(false);
            }
            _ => return Err(HprofError::UnknownSubrecord { tag, offset }),
        };
        self.input.skip(fixed, "heap dump subrecord")?;
        Ok(false)
    }

    fn class_dump(&mut self) -> Result<()> {
        let id = self.id_size;
        // class id, trace serial, super, loader, signers, protection domain, 2 reserved
        self.input.skip(id + 4 + 6 * id, "class dump header")?;
        let _instance_size = self.input.u32("class instance size")?;
        let n_const = self.input.u16("constant pool size")?;
        for _ in 0..n_const {
            let _idx = self.input.u16("constant pool index")?;
            self.typed_value()?;
        }
        let n_static = self.input.u16("static field count")?;
        for _ in 0..n_static {
            let _name = self.input.id(id, "static field name")?;
            self.typed_value()?;
        }
        let n_inst = self.input.u16("instance field count")?;
        self.input
            .skip(n_inst as u64 * (id + 1), "instance field descriptors")?;
        Ok(())
    }

    fn typed_value(&mut self) -> Result<()> {
        let at = self.input.pos;
        let ty = self.input.u8("value type")?;
        let w = type_width(ty, self.id_size).ok_or(HprofError::Malformed {
            offset: at,
            msg: format!("unknown basic type {ty}"),
        })?;
        self.input.skip(w, "typed value")
    }
}
