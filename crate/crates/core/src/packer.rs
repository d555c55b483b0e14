//! Grouping of hardware kernels into FPGA configuration images.
//!
//! Every kernel must land in exactly one image and no image may exceed the
//! device's area capacity. [`pack_auto`] uses first-fit decreasing;
//! [`pack_manual`] validates a designer-supplied assignment.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A synthesized function with its (scalar) FPGA area footprint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelResource {
    pub kernel_id: String,
    pub area: u64,
    pub function_id: String,
}

/// One loadable FPGA image and the kernels it bundles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigImage {
    pub image_id: String,
    pub kernels: Vec<KernelResource>,
    pub total_area: u64,
}

impl ConfigImage {
    pub fn contains(&self, kernel_id: &str) -> bool {
        self.kernels.iter().any(|k| k.kernel_id == kernel_id)
    }

    pub fn kernel_ids(&self) -> impl Iterator<Item = &str> {
        self.kernels.iter().map(|k| k.kernel_id.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PackError {
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("kernel `{kernel_id}` needs {area} area units but the device offers {capacity}")]
    OversizedKernel {
        kernel_id: String,
        area: u64,
        capacity: u64,
    },
    #[error("kernel `{0}` has zero area")]
    ZeroArea(String),
    #[error("kernel `{0}` is listed more than once")]
    DuplicateKernel(String),
    #[error("kernel `{0}` has no image assignment")]
    Unassigned(String),
    #[error("assignment names unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("image `{image_id}` needs {total} area units but the device offers {capacity}")]
    OverCapacity {
        image_id: String,
        total: u64,
        capacity: u64,
    },
    #[error("image `{0}` is defined more than once")]
    DuplicateImage(String),
    #[error("image `{image_id}` declares total {declared} but its kernels sum to {actual}")]
    TotalMismatch {
        image_id: String,
        declared: u64,
        actual: u64,
    },
    #[error("{0}")]
    Io(String),
    #[error("cannot parse plan `{path}`: {message}")]
    Parse { path: String, message: String },
}

fn sort_kernels(kernels: &mut [KernelResource]) {
    kernels.sort_by(|a, b| {
        Reverse(a.area)
            .cmp(&Reverse(b.area))
            .then_with(|| a.kernel_id.cmp(&b.kernel_id))
    });
}

fn check_inputs(kernels: &[KernelResource], capacity: u64) -> Result<(), PackError> {
    if capacity == 0 {
        return Err(PackError::ZeroCapacity);
    }
    let mut seen = BTreeSet::new();
    for k in kernels {
        if !seen.insert(k.kernel_id.as_str()) {
            return Err(PackError::DuplicateKernel(k.kernel_id.clone()));
        }
        if k.area == 0 {
            return Err(PackError::ZeroArea(k.kernel_id.clone()));
        }
    }
    Ok(())
}

/// First-fit decreasing by area, ties broken by kernel id. Images are named
/// `xclbin-0`, `xclbin-1`, ... in creation order.
pub fn pack_auto(kernels: &[KernelResource], capacity: u64) -> Result<Vec<ConfigImage>, PackError> {
    check_inputs(kernels, capacity)?;
    let mut sorted = kernels.to_vec();
    sort_kernels(&mut sorted);
    if let Some(k) = sorted.iter().find(|k| k.area > capacity) {
        return Err(PackError::OversizedKernel {
            kernel_id: k.kernel_id.clone(),
            area: k.area,
            capacity,
        });
    }

    let mut images: Vec<ConfigImage> = Vec::new();
    for k in sorted {
        match images
            .iter_mut()
            .find(|img| img.total_area + k.area <= capacity)
        {
            Some(img) => {
                img.total_area += k.area;
                img.kernels.push(k);
            }
            None => images.push(ConfigImage {
                image_id: format!("xclbin-{}", images.len()),
                total_area: k.area,
                kernels: vec![k],
            }),
        }
    }
    Ok(images)
}

/// Builds images from an explicit kernel-to-image map. Images come out in
/// image-id order.
pub fn pack_manual(
    assignments: &BTreeMap<String, String>,
    kernels: &[KernelResource],
    capacity: u64,
) -> Result<Vec<ConfigImage>, PackError> {
    check_inputs(kernels, capacity)?;
    if let Some(unknown) = assignments
        .keys()
        .find(|id| !kernels.iter().any(|k| &k.kernel_id == *id))
    {
        return Err(PackError::UnknownKernel(unknown.clone()));
    }

    let mut by_image: BTreeMap<&str, Vec<KernelResource>> = BTreeMap::new();
    for k in kernels {
        let image = assignments
            .get(&k.kernel_id)
            .ok_or_else(|| PackError::Unassigned(k.kernel_id.clone()))?;
        by_image.entry(image.as_str()).or_default().push(k.clone());
    }

    by_image
        .into_iter()
        .map(|(image_id, mut members)| {
            sort_kernels(&mut members);
            let total_area = members.iter().map(|k| k.area).sum();
            if total_area > capacity {
                return Err(PackError::OverCapacity {
                    image_id: image_id.to_string(),
                    total: total_area,
                    capacity,
                });
            }
            Ok(ConfigImage {
                image_id: image_id.to_string(),
                kernels: members,
                total_area,
            })
        })
        .collect()
}

/// Checks the plan invariants against a device capacity.
pub fn validate_plan(plan: &[ConfigImage], capacity: u64) -> Result<(), PackError> {
    let mut images = BTreeSet::new();
    let mut kernels = BTreeSet::new();
    for img in plan {
        if !images.insert(img.image_id.as_str()) {
            return Err(PackError::DuplicateImage(img.image_id.clone()));
        }
        let actual: u64 = img.kernels.iter().map(|k| k.area).sum();
        if actual != img.total_area {
            return Err(PackError::TotalMismatch {
                image_id: img.image_id.clone(),
                declared: img.total_area,
                actual,
            });
        }
        if actual > capacity {
            return Err(PackError::OverCapacity {
                image_id: img.image_id.clone(),
                total: actual,
                capacity,
            });
        }
        for k in &img.kernels {
            if !kernels.insert(k.kernel_id.as_str()) {
                return Err(PackError::DuplicateKernel(k.kernel_id.clone()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageUsage {
    pub image_id: String,
    pub kernels: usize,
    pub used: u64,
    pub capacity: u64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSummary {
    pub images: Vec<ImageUsage>,
}

impl PlanSummary {
    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,kernels,used,capacity,utilization\n");
        for u in &self.images {
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                u.image_id, u.kernels, u.used, u.capacity, u.utilization
            ));
        }
        out
    }
}

impl fmt::Display for PlanSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration image(s)", self.images.len())?;
        for u in &self.images {
            writeln!(
                f,
                "  {:<12} {:>2} kernel(s)  {:>6}/{:<6} {:>6.1}%",
                u.image_id,
                u.kernels,
                u.used,
                u.capacity,
                u.utilization * 100.0
            )?;
        }
        Ok(())
    }
}

pub fn plan_summary(plan: &[ConfigImage], capacity: u64) -> PlanSummary {
    PlanSummary {
        images: plan
            .iter()
            .map(|img| ImageUsage {
                image_id: img.image_id.clone(),
                kernels: img.kernels.len(),
                used: img.total_area,
                capacity,
                utilization: if capacity == 0 {
                    0.0
                } else {
                    img.total_area as f64 / capacity as f64
                },
            })
            .collect(),
    }
}

// --- plan files --------------------------------------------------------------

/// `image_id,kernel_id,area` rows, one per kernel.
pub fn plan_to_csv(plan: &[ConfigImage]) -> String {
    let mut out = String::from("image_id,kernel_id,area\n");
    for img in plan {
        for k in &img.kernels {
            out.push_str(&format!("{},{},{}\n", img.image_id, k.kernel_id, k.area));
        }
    }
    out
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default)]
    image: Vec<ImageRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    image_id: String,
    total_area: u64,
    #[serde(default)]
    kernel: Vec<KernelResource>,
}

pub fn plan_to_toml(plan: &[ConfigImage]) -> String {
    let file = PlanFile {
        image: plan
            .iter()
            .map(|img| ImageRecord {
                image_id: img.image_id.clone(),
                total_area: img.total_area,
                kernel: img.kernels.clone(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("plan records always serialize")
}

pub fn parse_plan(text: &str, origin: &str) -> Result<Vec<ConfigImage>, PackError> {
    let file: PlanFile = toml::from_str(text).map_err(|e| PackError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let plan: Vec<ConfigImage> = file
        .image
        .into_iter()
        .map(|r| ConfigImage {
            image_id: r.image_id,
            kernels: r.kernel,
            total_area: r.total_area,
        })
        .collect();
    validate_plan(&plan, u64::MAX)?;
    Ok(plan)
}

pub fn load_plan(path: &Path) -> Result<Vec<ConfigImage>, PackError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PackError::Io(format!("cannot read `{}`: {e}", path.display())))?;
    parse_plan(&text, &path.display().to_string())
}

/// Reads a manual assignment: `kernel_id = "image_id"` pairs, one per line.
pub fn parse_assignments(text: &str, origin: &str) -> Result<BTreeMap<String, String>, PackError> {
    toml::from_str(text).map_err(|e| PackError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(id: &str, area: u64) -> KernelResource {
        KernelResource {
            kernel_id: id.to_string(),
            area,
            function_id: format!("{id}_fn"),
        }
    }

    fn ids(img: &ConfigImage) -> Vec<&str> {
        img.kernel_ids().collect()
    }

    #[test]
    fn everything_fits_in_one_image() {
        let plan = pack_auto(&[k("a", 40), k("b", 30), k("c", 30)], 100).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].image_id, "xclbin-0");
        assert_eq!(ids(&plan[0]), ["a", "b", "c"]);
        assert_eq!(plan[0].total_area, 100);
    }

    #[test]
    fn ffd_splits_into_two_images() {
        let plan = pack_auto(&[k("a", 60), k("b", 50), k("c", 40)], 100).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(ids(&plan[0]), ["a", "c"]);
        assert_eq!(ids(&plan[1]), ["b"]);
        assert_eq!(plan[1].image_id, "xclbin-1");
    }

    #[test]
    fn oversized_kernel_is_named() {
        assert_eq!(
            pack_auto(&[k("a", 120)], 100),
            Err(PackError::OversizedKernel {
                kernel_id: "a".into(),
                area: 120,
                capacity: 100
            })
        );
        assert_eq!(pack_auto(&[k("a", 1)], 0), Err(PackError::ZeroCapacity));
        assert_eq!(
            pack_auto(&[k("a", 1), k("a", 2)], 10),
            Err(PackError::DuplicateKernel("a".into()))
        );
    }

    #[test]
    fn manual_plans() {
        let ks = [k("a", 40), k("b", 30)];
        let map = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect()
        };

        let plan = pack_manual(&map(&[("a", "img1"), ("b", "img1")]), &ks, 100).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(ids(&plan[0]), ["a", "b"]);

        let plan = pack_manual(&map(&[("a", "img1"), ("b", "img2")]), &ks, 100).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(
            (plan[0].image_id.as_str(), ids(&plan[0])),
            ("img1", vec!["a"])
        );
        assert_eq!(
            (plan[1].image_id.as_str(), ids(&plan[1])),
            ("img2", vec!["b"])
        );

        let big = [k("a", 60), k("b", 50)];
        assert_eq!(
            pack_manual(&map(&[("a", "img1"), ("b", "img1")]), &big, 100),
            Err(PackError::OverCapacity {
                image_id: "img1".into(),
                total: 110,
                capacity: 100
            })
        );
        assert_eq!(
            pack_manual(&map(&[("a", "img1")]), &ks, 100),
            Err(PackError::Unassigned("b".into()))
        );
        assert_eq!(
            pack_manual(&map(&[("a", "i"), ("b", "i"), ("z", "i")]), &ks, 100),
            Err(PackError::UnknownKernel("z".into()))
        );
    }

    #[test]
    fn summaries() {
        let full = pack_auto(&[k("a", 100)], 100).unwrap();
        assert_eq!(plan_summary(&full, 100).images[0].utilization, 1.0);

        let two = pack_auto(&[k("a", 100), k("b", 50)], 100).unwrap();
        let s = plan_summary(&two, 100);
        let utils: Vec<f64> = s.images.iter().map(|u| u.utilization).collect();
        assert_eq!(utils, [1.0, 0.5]);
        assert!(s.to_csv().contains("xclbin-1,1,50,100,0.5000"));

        let empty = plan_summary(&[], 100);
        assert_eq!(empty.image_count(), 0);
        assert_eq!(
            empty.to_csv(),
            "image_id,kernels,used,capacity,utilization\n"
        );
    }

    #[test]
    fn plan_files() {
        let plan = pack_auto(&[k("a", 60), k("b", 50), k("c", 40)], 100).unwrap();
        assert_eq!(parse_plan(&plan_to_toml(&plan), "t").unwrap(), plan);
        assert_eq!(
            plan_to_csv(&plan),
            "image_id,kernel_id,area\nxclbin-0,a,60\nxclbin-0,c,40\nxclbin-1,b,50\n"
        );
        let bad = "[[image]]\nimage_id = \"x\"\ntotal_area = 5\n[[image.kernel]]\nkernel_id = \"a\"\narea = 4\nfunction_id = \"f\"\n";
        assert!(matches!(
            parse_plan(bad, "bad"),
            Err(PackError::TotalMismatch { .. })
        ));
        let assign = parse_assignments("a = \"img1\"\nb = \"img2\"\n", "m").unwrap();
        assert_eq!(assign.len(), 2);
    }

    proptest! {
        #[test]
        fn auto_plans_are_feasible_and_deterministic(
            areas in proptest::collection::vec(1u64..=100, 0..40),
            capacity in 100u64..300,
        ) {
            let ks: Vec<_> = areas.iter().enumerate().map(|(i, &a)| k(&format!("k{i:02}"), a)).collect();
            let plan = pack_auto(&ks, capacity).unwrap();
            validate_plan(&plan, capacity).unwrap();
            let mut placed: Vec<_> = plan.iter().flat_map(|img| img.kernels.clone()).collect();
            placed.sort_by(|a, b| a.kernel_id.cmp(&b.kernel_id));
            prop_assert_eq!(&placed, &ks);
            prop_assert_eq!(plan_to_toml(&plan), plan_to_toml(&pack_auto(&ks, capacity).unwrap()));
        }
    }
}
