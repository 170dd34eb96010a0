//! Binary container for generated tasks, so expensive constructions can be
//! reused across runs. Layout is in `docs/FORMATS.md`; all integers and
//! floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{DomainDataset, MultiDomainTask};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADRMXDS\0";
pub const VERSION: u32 = 1;

pub fn write_task(task: &MultiDomainTask, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(task.domains.len() as u32).to_le_bytes())?;
    let target = task.target_index.map_or(-1i32, |t| t as i32);
    w.write_all(&target.to_le_bytes())?;
    w.write_all(&(task.num_classes() as u32).to_le_bytes())?;
    w.write_all(&(task.d_in() as u32).to_le_bytes())?;
    for d in &task.domains {
        w.write_all(&(d.domain_id as u32).to_le_bytes())?;
        w.write_all(&(d.name.len() as u32).to_le_bytes())?;
        w.write_all(d.name.as_bytes())?;
        w.write_all(&(d.len() as u32).to_le_bytes())?;
        for v in d.inputs.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &y in &d.labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.buf.len() {
            return Err(Error::Length {
                expected: end,
                actual: self.buf.len(),
            });
        }
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_task(mut r: impl Read) -> Result<MultiDomainTask> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut rd = Reader { buf: &buf, at: 0 };
    let magic = rd.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:02x?}")));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = rd.u32()? as usize;
    let target = rd.i32()?;
    let num_classes = rd.u32()? as usize;
    let d_in = rd.u32()? as usize;
    let mut domains = Vec::with_capacity(count);
    for _ in 0..count {
        let domain_id = rd.u32()? as usize;
        let name_len = rd.u32()? as usize;
        let name =
            String::from_utf8(rd.take(name_len)?.to_vec()).map_err(|e| Error::Format(format!("domain name: {e}")))?;
        let n = rd.u32()? as usize;
        let mut data = Vec::with_capacity(n * d_in);
        for _ in 0..n * d_in {
            data.push(rd.f64()?);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(rd.u32()? as usize);
        }
        let inputs = Tensor::matrix(n, d_in, data)?;
        domains.push(DomainDataset::new(domain_id, name, inputs, labels, num_classes)?);
    }
    if rd.at != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - rd.at)));
    }
    let target_index = (target >= 0).then_some(target as usize);
    MultiDomainTask::new(domains, target_index)
}

pub fn save_task(task: &MultiDomainTask, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_task(task, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_task(path: impl AsRef<Path>) -> Result<MultiDomainTask> {
    read_task(std::fs::File::open(path)?)
}
