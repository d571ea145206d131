//! Input pipelines: direct encoding for frame images, event-stream-to-frame
//! conversion for DVS recordings, IDX and event-CSV file formats, dataset
//! manifests, and seeded synthetic pattern generators.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Sample, StepInputs};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

/// One DVS event: microsecond timestamp, pixel coordinates, polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

/// An event recording over a `[H, W]` sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// `[height, width]`.
    pub sensor_shape: [usize; 2],
    pub label: Option<u32>,
}

impl EventStream {
    pub fn new(mut events: Vec<Event>, sensor_shape: [usize; 2], label: Option<u32>) -> Result<Self> {
        for e in &events {
            if (e.y as usize) >= sensor_shape[0] || (e.x as usize) >= sensor_shape[1] {
                return Err(Error::Data(format!(
                    "event at ({}, {}) outside sensor {:?}",
                    e.x, e.y, sensor_shape
                )));
            }
            if e.polarity > 1 {
                return Err(Error::Data(format!("polarity {} not in {{0,1}}", e.polarity)));
            }
        }
        events.sort_by_key(|e| e.t_us);
        Ok(EventStream {
            events,
            sensor_shape,
            label,
        })
    }

    /// Shift timestamps so the first event sits at t = 0.
    pub fn normalize(&mut self) {
        if let Some(t0) = self.events.first().map(|e| e.t_us) {
            for e in self.events.iter_mut() {
                e.t_us -= t0;
            }
        }
    }
}

/// Binary two-channel frames `[T][2][H][W]`; channel = polarity.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Tensor>,
    pub dt_us: u64,
    pub label: Option<u32>,
}

/// Accumulate events into `t_steps` binary frames of window `dt_us`.
///
/// Frame `t`, channel `p`, pixel `(y, x)` is 1 iff at least one polarity-`p`
/// event hit `(x, y)` during `[t*dt, (t+1)*dt)`; duplicates are absorbed
/// (binary OR). Streams shorter than `t_steps * dt_us` leave trailing
/// frames zero; later events are ignored.
pub fn dvs_to_frames(stream: &EventStream, dt_us: u64, t_steps: usize) -> Result<FrameSequence> {
    if dt_us == 0 {
        return Err(Error::Config("dt must be positive".into()));
    }
    if t_steps == 0 {
        return Err(Error::Config("frame count T must be >= 1".into()));
    }
    let [h, w] = stream.sensor_shape;
    let mut frames = vec![Tensor::zeros(&[2, h, w]); t_steps];
    for e in &stream.events {
        if (e.y as usize) >= h || (e.x as usize) >= w {
            return Err(Error::Data(format!(
                "event at ({}, {}) outside sensor {:?}",
                e.x, e.y, stream.sensor_shape
            )));
        }
        let window = (e.t_us / dt_us) as usize;
        if window >= t_steps {
            continue;
        }
        let idx = (e.polarity as usize * h + e.y as usize) * w + e.x as usize;
        frames[window].data_mut()[idx] = 1.0;
    }
    Ok(FrameSequence {
        frames,
        dt_us,
        label: stream.label,
    })
}

/// Direct encoding: present the same real-valued image as the first layer's
/// synaptic source at every step. Out-of-range images are linearly rescaled
/// into `[0, 1]`; the returned flag reports whether that happened.
pub fn direct_encode_input(image: &Tensor) -> (StepInputs, bool) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in image.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo >= 0.0 && hi <= 1.0 {
        return (StepInputs::Static(image.clone()), false);
    }
    let normalized = if hi > lo {
        image.map(|v| (v - lo) / (hi - lo))
    } else {
        image.map(|v| v.clamp(0.0, 1.0))
    };
    (StepInputs::Static(normalized), true)
}

/// Average-downsample a `[C, H, W]` tensor by integer factors.
pub fn downsample_avg(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 {
        return Err(Error::Config(format!(
            "downsample target {out_h}x{out_w} must divide {h}x{w}"
        )));
    }
    let (fy, fx) = (h / out_h, w / out_w);
    let norm = 1.0 / (fy * fx) as f64;
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let src = t.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += src[(ci * h + oy * fy + dy) * w + ox * fx + dx];
                    }
                }
                dst[(ci * out_h + oy) * out_w + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

/// Zero-pad a `[C, H, W]` tensor to a centered `[C, out_h, out_w]`.
pub fn center_pad(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if out_h < h || out_w < w {
        return Err(Error::Config(format!(
            "pad target {out_h}x{out_w} smaller than {h}x{w}"
        )));
    }
    let (oy, ox) = ((out_h - h) / 2, (out_w - w) / 2);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let src = t.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                dst[(ci * out_h + oy + iy) * out_w + ox + ix] = src[(ci * h + iy) * w + ix];
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic patterns
// ---------------------------------------------------------------------------

/// Class-conditional contrast templates: every class band is lit, but the
/// labeled class's band is brighter by a margin that shrinks as `noise`
/// grows. At zero noise the off-class bands are nearly dark, so the
/// templates are linearly separable; near `noise = 1` the task demands
/// fine rate discrimination.
fn class_template(class: usize, num_classes: usize, shape: &[usize; 3], noise: f64) -> Tensor {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let bright = 0.9;
    let margin = 0.8 * (1.0 - noise) + 0.05;
    let dim = (bright - margin).max(0.05);
    let band = h.div_ceil(num_classes).max(1);
    let mut t = Tensor::zeros(&[c, h, w]);
    let data = t.data_mut();
    for other in 0..num_classes {
        let lo = (other * h) / num_classes;
        let hi = (lo + band).min(h);
        let v = if other == class { bright } else { dim };
        for ci in 0..c {
            for y in lo..hi {
                for x in 0..w {
                    data[(ci * h + y) * w + x] = v;
                }
            }
        }
    }
    t
}

/// Deterministic synthetic dataset in both pipeline forms: static frames
/// for direct encoding, and event streams for frame conversion.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub frames: Vec<Sample>,
    pub events: Vec<EventStream>,
}

pub fn synth_patterns(
    num_classes: usize,
    shape: [usize; 3],
    time_steps: usize,
    samples_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<SynthDataset> {
    if num_classes == 0 || samples_per_class == 0 || time_steps == 0 {
        return Err(Error::Config("synth sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!("noise {noise} must be in [0, 1]")));
    }
    let mut frames = Vec::with_capacity(num_classes * samples_per_class);
    let mut events = Vec::with_capacity(num_classes * samples_per_class);
    let (h, w) = (shape[1], shape[2]);
    let dt_us = 1000u64;
    for class in 0..num_classes {
        let template = class_template(class, num_classes, &shape, noise);
        for s in 0..samples_per_class {
            let mut rng = rng_from(derive_seed(
                seed,
                0x53594e54,
                &[class as u64, s as u64],
            ));
            let image = template.map(|v| {
                (v + rng.gen_range(-1.0..1.0) * noise * 0.25).clamp(0.0, 1.0)
            });
            frames.push(Sample {
                input: StepInputs::Static(image),
                label: class,
            });

            // Event form over a [h, w] sensor: bright template pixels emit
            // ON events, dim pixels OFF events, one Bernoulli draw per
            // (step, pixel).
            let mut ev = Vec::new();
            for t in 0..time_steps {
                for y in 0..h {
                    for x in 0..w {
                        let v = template.data()[(y * w) + x];
                        let vn = (v + rng.gen_range(-1.0..1.0) * noise * 0.25).clamp(0.0, 1.0);
                        let t_us = t as u64 * dt_us + (x + y) as u64 % dt_us;
                        if rng.gen::<f64>() < vn * 0.5 {
                            ev.push(Event {
                                t_us,
                                x: x as u16,
                                y: y as u16,
                                polarity: 1,
                            });
                        }
                        if rng.gen::<f64>() < (1.0 - vn) * 0.5 {
                            ev.push(Event {
                                t_us,
                                x: x as u16,
                                y: y as u16,
                                polarity: 0,
                            });
                        }
                    }
                }
            }
            events.push(EventStream::new(ev, [h, w], Some(class as u32))?);
        }
    }
    Ok(SynthDataset { frames, events })
}

// ---------------------------------------------------------------------------
// IDX binary format (big-endian dimensions, unsigned-byte payload)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_DTYPE_U8: u8 = 0x08;

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let display = path.display().to_string();
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let fail = |offset: u64, message: String| Error::Parse {
        path: display.clone(),
        offset,
        message,
    };
    if bytes.len() < 4 {
        return Err(fail(0, "file shorter than the 4-byte magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(fail(0, "magic must start with two zero bytes".into()));
    }
    if bytes[2] != IDX_DTYPE_U8 {
        return Err(fail(2, format!("unsupported dtype 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(fail(3, "zero dimensions".into()));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(fail(
            bytes.len() as u64,
            format!("header needs {header_len} bytes, file has {}", bytes.len()),
        ));
    }
    let mut shape = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let off = 4 + 4 * d;
        let dim = u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        shape.push(dim as usize);
    }
    let expected: usize = shape.iter().product();
    let actual = bytes.len() - header_len;
    if actual != expected {
        return Err(fail(
            header_len as u64,
            format!("expected {expected} payload bytes, found {actual}"),
        ));
    }
    Ok(IdxArray {
        shape,
        data: bytes[header_len..].to_vec(),
    })
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    if array.shape.is_empty() || array.shape.len() > 255 {
        return Err(Error::Config("idx arrays need 1..=255 dimensions".into()));
    }
    let expected: usize = array.shape.iter().product();
    if expected != array.data.len() {
        return Err(Error::Config(format!(
            "idx shape {:?} wants {expected} bytes, got {}",
            array.shape,
            array.data.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * array.shape.len() + array.data.len());
    out.extend_from_slice(&[0, 0, IDX_DTYPE_U8, array.shape.len() as u8]);
    for &d in &array.shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

impl FrameSequence {
    /// Pack into an IDX array `[T, 2, H, W]` of 0/1 bytes.
    pub fn to_idx(&self) -> IdxArray {
        let fs = self.frames[0].shape();
        let mut data = Vec::with_capacity(self.frames.len() * self.frames[0].len());
        for f in &self.frames {
            data.extend(f.data().iter().map(|&v| if v != 0.0 { 1u8 } else { 0u8 }));
        }
        IdxArray {
            shape: vec![self.frames.len(), fs[0], fs[1], fs[2]],
            data,
        }
    }

    pub fn from_idx(array: &IdxArray, dt_us: u64, label: Option<u32>) -> Result<FrameSequence> {
        if array.shape.len() != 4 {
            return Err(Error::Data(format!(
                "frame idx must be [T, C, H, W], got {:?}",
                array.shape
            )));
        }
        let (t, c, h, w) = (array.shape[0], array.shape[1], array.shape[2], array.shape[3]);
        let per = c * h * w;
        let frames = (0..t)
            .map(|i| {
                Tensor::from_vec(
                    &[c, h, w],
                    array.data[i * per..(i + 1) * per]
                        .iter()
                        .map(|&b| b as f64)
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameSequence {
            frames,
            dt_us,
            label,
        })
    }
}

// ---------------------------------------------------------------------------
// Event CSV (header `t_us,x,y,p`)
// ---------------------------------------------------------------------------

pub const EVENT_CSV_HEADER: &str = "t_us,x,y,p";

pub fn read_event_csv(path: &Path, sensor_shape: [usize; 2]) -> Result<EventStream> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let fail = |offset: u64, message: String| Error::Parse {
        path: display.clone(),
        offset,
        message,
    };
    let mut events = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if i == 0 {
            if trimmed != EVENT_CSV_HEADER {
                return Err(fail(
                    line_offset,
                    format!("expected header '{EVENT_CSV_HEADER}', got '{trimmed}'"),
                ));
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(fail(
                line_offset,
                format!("expected 4 comma-separated fields, got {}", fields.len()),
            ));
        }
        let parse = |s: &str, name: &str| -> Result<u64> {
            s.trim()
                .parse::<u64>()
                .map_err(|e| fail(line_offset, format!("bad {name} '{s}': {e}")))
        };
        let t_us = parse(fields[0], "t_us")?;
        let x = parse(fields[1], "x")?;
        let y = parse(fields[2], "y")?;
        let p = parse(fields[3], "p")?;
        if p > 1 {
            return Err(fail(line_offset, format!("polarity {p} not in {{0,1}}")));
        }
        events.push(Event {
            t_us,
            x: x as u16,
            y: y as u16,
            polarity: p as u8,
        });
    }
    EventStream::new(events, sensor_shape, None)
}

pub fn write_event_csv(path: &Path, stream: &EventStream) -> Result<()> {
    let mut out = String::from(EVENT_CSV_HEADER);
    out.push('\n');
    for e in &stream.events {
        out.push_str(&format!("{},{},{},{}\n", e.t_us, e.x, e.y, e.polarity));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileLabel {
    pub path: String,
    pub label: usize,
}

/// JSON manifest describing where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetManifest {
    /// Seeded synthetic band patterns (static frames).
    Synth {
        num_classes: usize,
        shape: [usize; 3],
        time_steps: usize,
        samples_per_class: usize,
        #[serde(default)]
        test_samples_per_class: usize,
        noise: f64,
        seed: u64,
    },
    /// IDX image + label files (MNIST family), optionally padded.
    Idx {
        images: String,
        labels: String,
        num_classes: usize,
        time_steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pad_to: Option<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<String>,
    },
    /// Event CSV recordings converted to frames on load.
    Events {
        sensor_shape: [usize; 2],
        dt_us: u64,
        time_steps: usize,
        num_classes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        downsample_to: Option<[usize; 2]>,
        train: Vec<FileLabel>,
        #[serde(default)]
        test: Vec<FileLabel>,
    },
    /// Pre-converted frame sequences stored as IDX `[T, 2, H, W]`.
    Frames {
        num_classes: usize,
        time_steps: usize,
        train: Vec<FileLabel>,
        #[serde(default)]
        test: Vec<FileLabel>,
    },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub time_steps: usize,
    /// Count of inputs that had to be rescaled into [0, 1].
    pub normalized_inputs: usize,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Load a dataset; file paths inside the manifest resolve relative to the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    dataset_from_manifest(&manifest, base)
}

pub fn dataset_from_manifest(manifest: &DatasetManifest, base: &Path) -> Result<Dataset> {
    match manifest {
        DatasetManifest::Synth {
            num_classes,
            shape,
            time_steps,
            samples_per_class,
            test_samples_per_class,
            noise,
            seed,
        } => {
            let train =
                synth_patterns(*num_classes, *shape, *time_steps, *samples_per_class, *noise, *seed)?
                    .frames;
            let test = if *test_samples_per_class > 0 {
                synth_patterns(
                    *num_classes,
                    *shape,
                    *time_steps,
                    *test_samples_per_class,
                    *noise,
                    derive_seed(*seed, 0x54455354, &[]),
                )?
                .frames
            } else {
                Vec::new()
            };
            Ok(Dataset {
                train,
                test,
                input_shape: *shape,
                num_classes: *num_classes,
                time_steps: *time_steps,
                normalized_inputs: 0,
            })
        }
        DatasetManifest::Idx {
            images,
            labels,
            num_classes,
            time_steps,
            pad_to,
            test_images,
            test_labels,
        } => {
            let mut normalized = 0usize;
            let train = load_idx_pairs(&base.join(images), &base.join(labels), *pad_to, &mut normalized)?;
            let test = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    load_idx_pairs(&base.join(ti), &base.join(tl), *pad_to, &mut normalized)?
                }
                _ => Vec::new(),
            };
            let shape = match &train.first() {
                Some(s) => {
                    let sh = s.input.shape();
                    [sh[0], sh[1], sh[2]]
                }
                None => return Err(Error::Data("idx dataset has no samples".into())),
            };
            Ok(Dataset {
                train,
                test,
                input_shape: shape,
                num_classes: *num_classes,
                time_steps: *time_steps,
                normalized_inputs: normalized,
            })
        }
        DatasetManifest::Events {
            sensor_shape,
            dt_us,
            time_steps,
            num_classes,
            downsample_to,
            train,
            test,
        } => {
            let load_split = |files: &[FileLabel]| -> Result<Vec<Sample>> {
                files
                    .iter()
                    .map(|fl| {
                        let mut stream = read_event_csv(&base.join(&fl.path), *sensor_shape)?;
                        stream.normalize();
                        let seq = dvs_to_frames(&stream, *dt_us, *time_steps)?;
                        let frames = match downsample_to {
                            Some([h, w]) => seq
                                .frames
                                .iter()
                                .map(|f| downsample_avg(f, *h, *w))
                                .collect::<Result<Vec<_>>>()?,
                            None => seq.frames,
                        };
                        Ok(Sample {
                            input: StepInputs::Sequence(frames),
                            label: fl.label,
                        })
                    })
                    .collect()
            };
            let train_samples = load_split(train)?;
            let test_samples = load_split(test)?;
            let shape = match train_samples.first() {
                Some(s) => {
                    let sh = s.input.shape();
                    [sh[0], sh[1], sh[2]]
                }
                None => return Err(Error::Data("event dataset has no samples".into())),
            };
            Ok(Dataset {
                train: train_samples,
                test: test_samples,
                input_shape: shape,
                num_classes: *num_classes,
                time_steps: *time_steps,
                normalized_inputs: 0,
            })
        }
        DatasetManifest::Frames {
            num_classes,
            time_steps,
            train,
            test,
        } => {
            let load_split = |files: &[FileLabel]| -> Result<Vec<Sample>> {
                files
                    .iter()
                    .map(|fl| {
                        let arr = read_idx(&base.join(&fl.path))?;
                        let seq = FrameSequence::from_idx(&arr, 0, None)?;
                        Ok(Sample {
                            input: StepInputs::Sequence(seq.frames),
                            label: fl.label,
                        })
                    })
                    .collect()
            };
            let train_samples = load_split(train)?;
            let test_samples = load_split(test)?;
            let shape = match train_samples.first() {
                Some(s) => {
                    let sh = s.input.shape();
                    [sh[0], sh[1], sh[2]]
                }
                None => return Err(Error::Data("frame dataset has no samples".into())),
            };
            Ok(Dataset {
                train: train_samples,
                test: test_samples,
                input_shape: shape,
                num_classes: *num_classes,
                time_steps: *time_steps,
                normalized_inputs: 0,
            })
        }
    }
}

fn load_idx_pairs(
    images: &Path,
    labels: &Path,
    pad_to: Option<[usize; 2]>,
    normalized: &mut usize,
) -> Result<Vec<Sample>> {
    let imgs = read_idx(images)?;
    let lbls = read_idx(labels)?;
    if imgs.shape.len() != 3 {
        return Err(Error::Data(format!(
            "image idx must be [N, H, W], got {:?}",
            imgs.shape
        )));
    }
    if lbls.shape.len() != 1 || lbls.shape[0] != imgs.shape[0] {
        return Err(Error::Data(format!(
            "label idx shape {:?} does not match {} images",
            lbls.shape, imgs.shape[0]
        )));
    }
    let (n, h, w) = (imgs.shape[0], imgs.shape[1], imgs.shape[2]);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let raw = Tensor::from_vec(
            &[1, h, w],
            imgs.data[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        )?;
        let padded = match pad_to {
            Some([ph, pw]) => center_pad(&raw, ph, pw)?,
            None => raw,
        };
        let (input, warned) = direct_encode_input(&padded);
        if warned {
            *normalized += 1;
        }
        out.push(Sample {
            input,
            label: lbls.data[i] as usize,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_event_stream() -> EventStream {
        EventStream::new(
            vec![Event {
                t_us: 0,
                x: 3,
                y: 4,
                polarity: 1,
            }],
            [8, 8],
            Some(0),
        )
        .unwrap()
    }

    #[test]
    fn empty_stream_gives_all_zero_frames() {
        let stream = EventStream::new(vec![], [4, 4], None).unwrap();
        let seq = dvs_to_frames(&stream, 20_000, 3).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert!(seq.frames.iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn single_event_lands_at_polarity_row_col() {
        let seq = dvs_to_frames(&one_event_stream(), 20_000, 2).unwrap();
        let (polarity, row, col) = (1usize, 4usize, 3usize);
        let expected_index = (polarity * 8 + row) * 8 + col;
        for (i, f) in seq.frames[0].data().iter().enumerate() {
            let expected = if i == expected_index { 1.0 } else { 0.0 };
            assert_eq!(*f, expected, "index {i}");
        }
        assert!(seq.frames[1].max_abs() == 0.0);
    }

    #[test]
    fn paper_style_window_settings_accepted() {
        let stream = one_event_stream();
        assert_eq!(dvs_to_frames(&stream, 20_000, 60).unwrap().frames.len(), 60);
        assert_eq!(dvs_to_frames(&stream, 5_000, 100).unwrap().frames.len(), 100);
    }

    #[test]
    fn duplicate_events_are_idempotent() {
        let mut events = one_event_stream().events;
        events.push(events[0]);
        let dup = EventStream::new(events, [8, 8], Some(0)).unwrap();
        let a = dvs_to_frames(&one_event_stream(), 20_000, 2).unwrap();
        let b = dvs_to_frames(&dup, 20_000, 2).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn out_of_bounds_event_is_a_data_error() {
        assert!(EventStream::new(
            vec![Event {
                t_us: 0,
                x: 8,
                y: 0,
                polarity: 1
            }],
            [8, 8],
            None,
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn frame_occupancy_bounded_by_distinct_event_cells(
            raw in proptest::collection::vec((0u64..40_000, 0u16..4, 0u16..4, 0u8..2), 0..40)
        ) {
            let events: Vec<Event> = raw
                .iter()
                .map(|&(t_us, x, y, polarity)| Event { t_us, x, y, polarity })
                .collect();
            let stream = EventStream::new(events.clone(), [4, 4], None).unwrap();
            let seq = dvs_to_frames(&stream, 10_000, 4).unwrap();
            let occupancy: f64 = seq.frames.iter().map(|f| f.sum()).sum();
            let mut cells: std::collections::HashSet<(u64, u16, u16, u8)> =
                std::collections::HashSet::new();
            for e in &events {
                cells.insert((e.t_us / 10_000, e.x, e.y, e.polarity));
            }
            prop_assert!(occupancy as usize <= cells.len());

            // Adding a duplicate event never changes the frames.
            if let Some(first) = events.first().copied() {
                let mut doubled = events.clone();
                doubled.push(first);
                let stream2 = EventStream::new(doubled, [4, 4], None).unwrap();
                let seq2 = dvs_to_frames(&stream2, 10_000, 4).unwrap();
                prop_assert_eq!(&seq.frames, &seq2.frames);
            }
        }
    }

    #[test]
    fn direct_encode_is_time_invariant_and_normalizes() {
        let img = Tensor::from_vec(&[1, 1, 2], vec![0.2, 0.8]).unwrap();
        let (enc, warned) = direct_encode_input(&img);
        assert!(!warned);
        assert_eq!(enc.at(0).as_ref(), enc.at(9).as_ref());

        let wild = Tensor::from_vec(&[1, 1, 2], vec![-1.0, 3.0]).unwrap();
        let (enc, warned) = direct_encode_input(&wild);
        assert!(warned);
        assert_eq!(enc.at(0).data(), &[0.0, 1.0]);
    }

    #[test]
    fn synth_is_deterministic_and_shaped() {
        let a = synth_patterns(2, [1, 8, 8], 10, 3, 0.05, 7).unwrap();
        let b = synth_patterns(2, [1, 8, 8], 10, 3, 0.05, 7).unwrap();
        assert_eq!(a.frames.len(), 6);
        assert_eq!(a.events.len(), 6);
        for (x, y) in a.frames.iter().zip(b.frames.iter()) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.label, y.label);
        }
        for (x, y) in a.events.iter().zip(b.events.iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.frames[0].input.shape(), &[1, 8, 8]);
    }

    #[test]
    fn synth_templates_separate_classes() {
        let d = synth_patterns(2, [1, 8, 8], 4, 1, 0.0, 1).unwrap();
        let top = &d.frames[0];
        let bottom = &d.frames[1];
        // Class 0's top band is bright; class 1's top band is nearly dark
        // at zero noise (margin at its maximum).
        assert_eq!(top.input.at(0).data()[0], 0.9);
        assert!(bottom.input.at(0).data()[0] < 0.1);
        // Zero noise means zero jitter: samples equal their templates.
        let d2 = synth_patterns(2, [1, 8, 8], 4, 2, 0.0, 99).unwrap();
        assert_eq!(d2.frames[0].input, d2.frames[1].input);
    }

    #[test]
    fn idx_round_trip_and_header_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("digits.idx");
        let array = IdxArray {
            shape: vec![10, 28, 28],
            data: (0..10 * 28 * 28).map(|i| (i % 251) as u8).collect(),
        };
        write_idx(&path, &array).unwrap();
        let back = read_idx(&path).unwrap();
        assert_eq!(array, back);
        assert_eq!(back.shape, vec![10, 28, 28]);
    }

    #[test]
    fn truncated_idx_names_expected_and_actual_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let array = IdxArray {
            shape: vec![4],
            data: vec![1, 2, 3, 4],
        };
        write_idx(&path, &array).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        match read_idx(&path).unwrap_err() {
            Error::Parse { message, .. } => {
                assert!(message.contains("expected 4"), "{message}");
                assert!(message.contains("found 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn event_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let stream = EventStream::new(
            vec![
                Event { t_us: 5, x: 1, y: 2, polarity: 0 },
                Event { t_us: 9, x: 3, y: 0, polarity: 1 },
            ],
            [4, 4],
            None,
        )
        .unwrap();
        write_event_csv(&path, &stream).unwrap();
        let back = read_event_csv(&path, [4, 4]).unwrap();
        assert_eq!(stream, back);
    }

    #[test]
    fn malformed_event_row_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(&path, "t_us,x,y,p\n1,2,3,1\nnope\n").unwrap();
        match read_event_csv(&path, [8, 8]).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 19),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_sequence_idx_round_trip() {
        let stream = one_event_stream();
        let seq = dvs_to_frames(&stream, 20_000, 3).unwrap();
        let idx = seq.to_idx();
        let back = FrameSequence::from_idx(&idx, seq.dt_us, seq.label).unwrap();
        assert_eq!(seq.frames, back.frames);
    }

    #[test]
    fn downsample_and_pad_shapes() {
        let t = Tensor::full(&[2, 8, 8], 1.0);
        let d = downsample_avg(&t, 4, 4).unwrap();
        assert_eq!(d.shape(), &[2, 4, 4]);
        assert!(d.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let p = center_pad(&t, 12, 12).unwrap();
        assert_eq!(p.shape(), &[2, 12, 12]);
        assert_eq!(p.sum(), t.sum());
        assert!(downsample_avg(&t, 3, 3).is_err());
    }

    #[test]
    fn idx_manifest_loads_with_padding() {
        let dir = tempfile::tempdir().unwrap();
        // 4 tiny "digit" images 6x6, labels 0/1/0/1.
        let images = IdxArray {
            shape: vec![4, 6, 6],
            data: (0..4 * 36).map(|i| (i % 7 * 36) as u8).collect(),
        };
        let labels = IdxArray {
            shape: vec![4],
            data: vec![0, 1, 0, 1],
        };
        write_idx(&dir.path().join("imgs.idx"), &images).unwrap();
        write_idx(&dir.path().join("lbls.idx"), &labels).unwrap();
        let manifest = DatasetManifest::Idx {
            images: "imgs.idx".into(),
            labels: "lbls.idx".into(),
            num_classes: 2,
            time_steps: 5,
            pad_to: Some([8, 8]),
            test_images: None,
            test_labels: None,
        };
        let ds = dataset_from_manifest(&manifest, dir.path()).unwrap();
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.input_shape, [1, 8, 8]);
        assert_eq!(ds.train[1].label, 1);
        // Padded border stays zero; interior is the normalized pixel value.
        let img = ds.train[0].input.at(0);
        assert_eq!(img.data()[0], 0.0);
        assert!(img.max_abs() <= 1.0);
    }

    #[test]
    fn events_manifest_loads_with_downsampling() {
        let dir = tempfile::tempdir().unwrap();
        let stream = EventStream::new(
            vec![
                Event { t_us: 100, x: 0, y: 0, polarity: 1 },
                Event { t_us: 1_100, x: 7, y: 7, polarity: 0 },
            ],
            [8, 8],
            None,
        )
        .unwrap();
        write_event_csv(&dir.path().join("a.csv"), &stream).unwrap();
        let manifest = DatasetManifest::Events {
            sensor_shape: [8, 8],
            dt_us: 1_000,
            time_steps: 3,
            num_classes: 2,
            downsample_to: Some([4, 4]),
            train: vec![FileLabel {
                path: "a.csv".into(),
                label: 1,
            }],
            test: vec![],
        };
        let ds = dataset_from_manifest(&manifest, dir.path()).unwrap();
        assert_eq!(ds.input_shape, [2, 4, 4]);
        let StepInputs::Sequence(frames) = &ds.train[0].input else {
            panic!("expected frame sequence");
        };
        assert_eq!(frames.len(), 3);
        // Timestamps were normalized, so the first event lands in frame 0;
        // a 2x2 average pool turns a single set pixel into 0.25.
        assert_eq!(frames[0].data()[(1 * 4) * 4 * 0], 0.25);
        assert!((frames[1].sum() - 0.25).abs() < 1e-12);
        assert_eq!(frames[2].sum(), 0.0);
    }

    #[test]
    fn synth_manifest_loads() {
        let manifest = DatasetManifest::Synth {
            num_classes: 2,
            shape: [1, 8, 8],
            time_steps: 10,
            samples_per_class: 4,
            test_samples_per_class: 2,
            noise: 0.05,
            seed: 3,
        };
        let ds = dataset_from_manifest(&manifest, Path::new(".")).unwrap();
        assert_eq!(ds.train.len(), 8);
        assert_eq!(ds.test.len(), 4);
        assert_eq!(ds.input_shape, [1, 8, 8]);
        // JSON round trip of the manifest itself.
        let json = serde_json::to_string(&manifest).unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(manifest, back);
    }
}
