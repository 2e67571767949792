//! Hardware parameter model: chiplet geometries, buffer hierarchy, unit costs
//! and the network-on-package. Every timing and energy constant is an input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Diagnostic, Error, Result};
use crate::workload::ViTModelSpec;

/// The shipped default configuration. Its constants are plausible placeholders,
/// not calibrated device data.
pub const REFERENCE_TOML: &str = include_str!("../configs/reference.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcimConfig {
    pub pe_per_chiplet: u32,
    pub sa_per_pe: u32,
    pub sa_rows: u32,
    pub sa_cols: u32,
    /// Columns multiplexed onto one ADC (`M`).
    pub group_size: u32,
    pub cell_bits: u32,
    pub adc_bits: u32,
    /// One ADC conversion.
    pub t_adc_ns: f64,
    pub e_adc_pj: f64,
    /// Analog MAC energy per activated cell per input-bit cycle.
    pub e_mac_cell_pj: f64,
    /// Wordline activation and bitline settle per input-bit cycle.
    pub t_row_ns: f64,
    pub simd_width: u32,
    pub t_simd_ns: f64,
    pub e_simd_pj: f64,
}

impl AcimConfig {
    pub fn groups_per_sa(&self) -> u32 {
        self.sa_cols / self.group_size
    }

    pub fn sa_per_chiplet(&self) -> u64 {
        self.pe_per_chiplet as u64 * self.sa_per_pe as u64
    }

    /// Physical columns (cells) one logical weight occupies.
    pub fn slices(&self, weight_bits: u32) -> u32 {
        weight_bits.div_ceil(self.cell_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcimConfig {
    pub pe_per_chiplet: u32,
    pub sa_per_pe: u32,
    pub sa_rows: u32,
    pub sa_cols: u32,
    /// One input-bit MAC cycle of a subarray.
    pub t_cycle_ns: f64,
    pub e_mac_pj: f64,
    /// Writing one subarray row of weights.
    pub t_write_ns: f64,
    pub e_write_pj: f64,
    pub buffer_bytes: u64,
    pub simd_width: u32,
    pub t_simd_ns: f64,
    pub e_simd_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdpConfig {
    pub sram_banks: u32,
    pub bank_bytes: u64,
    pub simd_width: u32,
    pub t_simd_ns: f64,
    pub e_simd_pj: f64,
    pub e_buf_read_pj: f64,
    pub e_buf_write_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NopConfig {
    /// Mesh width; derived from the chiplet count when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_x: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_y: Option<u32>,
    /// Link bandwidth in GB/s (bytes per ns).
    pub bw_gbps: f64,
    pub t_hop_ns: f64,
    pub e_bit_pj: f64,
    /// Serialize transfers that share a chiplet port. Off by default.
    #[serde(default)]
    pub link_contention: bool,
}

/// Per-byte access cost of one buffer or interconnect level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessCost {
    pub ns_per_byte: f64,
    pub pj_per_byte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Derived from the model and mapping when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_acim_chiplets: Option<u32>,
    pub n_dcim_chiplets: u32,
    #[serde(default = "one")]
    pub n_idp_chiplets: u32,
    pub chiplet_buffer: AccessCost,
    pub local_buffer: AccessCost,
    pub intra_ic: AccessCost,
    /// Token block size `B_L` of the pipeline and blocked attention.
    pub block_tokens: u32,
    pub clock_mhz: f64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub acim: AcimConfig,
    pub dcim: DcimConfig,
    pub idp: IdpConfig,
    pub nop: NopConfig,
    pub system: SystemParams,
}

/// On-disk layout: the system sections plus an optional `[model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ViTModelSpec>,
    pub acim: AcimConfig,
    pub dcim: DcimConfig,
    pub idp: IdpConfig,
    pub nop: NopConfig,
    pub system: SystemParams,
}

impl ConfigFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses TOML or JSON; `.json` files are read as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_TOML).expect("shipped reference config parses")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            acim: self.acim.clone(),
            dcim: self.dcim.clone(),
            idp: self.idp.clone(),
            nop: self.nop.clone(),
            system: self.system.clone(),
        }
    }

    pub fn from_parts(model: Option<ViTModelSpec>, sys: SystemConfig) -> Self {
        Self {
            model,
            acim: sys.acim,
            dcim: sys.dcim,
            idp: sys.idp,
            nop: sys.nop,
            system: sys.system,
        }
    }
}

impl SystemConfig {
    pub fn reference() -> Self {
        ConfigFile::reference().system()
    }

    /// `A<acim PEs>D<dcim PEs>`, e.g. `A32D16`.
    pub fn label(&self) -> String {
        format!("A{}D{}", self.acim.pe_per_chiplet, self.dcim.pe_per_chiplet)
    }

    pub fn with_chiplet_sizes(mut self, acim_pes: u32, dcim_pes: u32) -> Self {
        self.acim.pe_per_chiplet = acim_pes;
        self.dcim.pe_per_chiplet = dcim_pes;
        self
    }

    pub fn with_bandwidth(mut self, bw_gbps: f64) -> Self {
        self.nop.bw_gbps = bw_gbps;
        self
    }

    /// Heads placed on DCIM chiplet `c` (heads are dealt round-robin).
    pub fn heads_on_dcim(&self, heads: u32, chiplet: u32) -> Vec<u32> {
        (0..heads)
            .filter(|h| h % self.system.n_dcim_chiplets == chiplet)
            .collect()
    }

    /// Q/K/V bytes one DCIM chiplet must hold for all heads assigned to it.
    pub fn dcim_buffer_needed(&self, spec: &ViTModelSpec) -> u64 {
        let per_head = 3 * spec.seq_len as u64 * spec.head_dim() as u64 * spec.act_bytes();
        let heads = (spec.heads as u64).div_ceil(self.system.n_dcim_chiplets.max(1) as u64);
        per_head * heads
    }
}

/// Weights storable in one ACIM chiplet.
pub fn acim_capacity(acim: &AcimConfig, weight_bits: u32) -> u64 {
    let cells = acim.sa_per_chiplet() * acim.sa_rows as u64 * acim.sa_cols as u64;
    cells / acim.slices(weight_bits) as u64
}

/// Lower bound on ACIM chiplets from raw weight count. Placement can require more.
pub fn required_acim_chiplets(spec: &ViTModelSpec, acim: &AcimConfig) -> Result<u64> {
    let cap = acim_capacity(acim, spec.weight_bits);
    if cap == 0 {
        return Err(Error::Config(vec![Diagnostic::new(
            "acim",
            "chiplet capacity is zero",
        )]));
    }
    Ok(spec.static_weight_count().div_ceil(cap))
}

/// Smallest near-square mesh holding `chiplets` nodes.
pub fn auto_mesh(chiplets: u32) -> (u32, u32) {
    let x = (chiplets as f64).sqrt().ceil().max(1.0) as u32;
    let y = chiplets.div_ceil(x).max(1);
    (x, y)
}

/// Checks every invariant of the configuration against a model.
pub fn validate(config: &SystemConfig, spec: &ViTModelSpec) -> Result<()> {
    let mut d = Vec::new();
    if let Err(e) = spec.validate() {
        d.push(Diagnostic::new("model", e.to_string()));
    }
    let mut positive_u = |path: &str, v: u64| {
        if v == 0 {
            d.push(Diagnostic::new(path, "must be positive"));
        }
    };
    let a = &config.acim;
    positive_u("acim.pe_per_chiplet", a.pe_per_chiplet as u64);
    positive_u("acim.sa_per_pe", a.sa_per_pe as u64);
    positive_u("acim.sa_rows", a.sa_rows as u64);
    positive_u("acim.sa_cols", a.sa_cols as u64);
    positive_u("acim.group_size", a.group_size as u64);
    positive_u("acim.cell_bits", a.cell_bits as u64);
    positive_u("acim.adc_bits", a.adc_bits as u64);
    positive_u("acim.simd_width", a.simd_width as u64);
    let c = &config.dcim;
    positive_u("dcim.pe_per_chiplet", c.pe_per_chiplet as u64);
    positive_u("dcim.sa_per_pe", c.sa_per_pe as u64);
    positive_u("dcim.sa_rows", c.sa_rows as u64);
    positive_u("dcim.sa_cols", c.sa_cols as u64);
    positive_u("dcim.buffer_bytes", c.buffer_bytes);
    positive_u("dcim.simd_width", c.simd_width as u64);
    let i = &config.idp;
    positive_u("idp.sram_banks", i.sram_banks as u64);
    positive_u("idp.bank_bytes", i.bank_bytes);
    positive_u("idp.simd_width", i.simd_width as u64);
    let s = &config.system;
    positive_u("system.n_dcim_chiplets", s.n_dcim_chiplets as u64);
    positive_u("system.block_tokens", s.block_tokens as u64);

    let mut positive_f = |path: &str, v: f64| {
        if !(v.is_finite() && v > 0.0) {
            d.push(Diagnostic::new(path, format!("must be finite and > 0 (got {v})")));
        }
    };
    positive_f("acim.t_adc_ns", a.t_adc_ns);
    positive_f("acim.e_adc_pj", a.e_adc_pj);
    positive_f("acim.e_mac_cell_pj", a.e_mac_cell_pj);
    positive_f("acim.t_row_ns", a.t_row_ns);
    positive_f("acim.t_simd_ns", a.t_simd_ns);
    positive_f("acim.e_simd_pj", a.e_simd_pj);
    positive_f("dcim.t_cycle_ns", c.t_cycle_ns);
    positive_f("dcim.e_mac_pj", c.e_mac_pj);
    positive_f("dcim.t_write_ns", c.t_write_ns);
    positive_f("dcim.e_write_pj", c.e_write_pj);
    positive_f("dcim.t_simd_ns", c.t_simd_ns);
    positive_f("dcim.e_simd_pj", c.e_simd_pj);
    positive_f("idp.t_simd_ns", i.t_simd_ns);
    positive_f("idp.e_simd_pj", i.e_simd_pj);
    positive_f("nop.bw_gbps", config.nop.bw_gbps);
    positive_f("system.clock_mhz", s.clock_mhz);

    let mut non_negative = |path: &str, v: f64| {
        if !(v.is_finite() && v >= 0.0) {
            d.push(Diagnostic::new(path, format!("must be finite and >= 0 (got {v})")));
        }
    };
    non_negative("idp.e_buf_read_pj", i.e_buf_read_pj);
    non_negative("idp.e_buf_write_pj", i.e_buf_write_pj);
    non_negative("nop.t_hop_ns", config.nop.t_hop_ns);
    non_negative("nop.e_bit_pj", config.nop.e_bit_pj);
    for (name, cost) in [
        ("system.chiplet_buffer", s.chiplet_buffer),
        ("system.local_buffer", s.local_buffer),
        ("system.intra_ic", s.intra_ic),
    ] {
        non_negative(&format!("{name}.ns_per_byte"), cost.ns_per_byte);
        non_negative(&format!("{name}.pj_per_byte"), cost.pj_per_byte);
    }

    if a.group_size > 0 && !a.sa_cols.is_multiple_of(a.group_size) {
        d.push(Diagnostic::new(
            "acim.group_size",
            format!("sa_cols ({}) must be a multiple of group_size ({})", a.sa_cols, a.group_size),
        ));
    }
    if s.n_idp_chiplets != 1 {
        d.push(Diagnostic::new(
            "system.n_idp_chiplets",
            format!("exactly one IDP chiplet is modeled (got {})", s.n_idp_chiplets),
        ));
    }

    let structural_ok = d.is_empty();
    if structural_ok {
        let required = required_acim_chiplets(spec, a)?;
        let n_acim = match s.n_acim_chiplets {
            Some(n) => {
                if (n as u64) < required {
                    d.push(Diagnostic::new(
                        "system.n_acim_chiplets",
                        format!("{n} chiplets cannot hold {} weights; at least {required} needed", spec.static_weight_count()),
                    ));
                }
                n as u64
            }
            None => required,
        };
        let total = n_acim + s.n_dcim_chiplets as u64 + s.n_idp_chiplets as u64;
        match (config.nop.mesh_x, config.nop.mesh_y) {
            (Some(x), Some(y)) => {
                if (x as u64) * (y as u64) < total {
                    d.push(Diagnostic::new(
                        "nop.mesh_x",
                        format!("mesh {x}x{y} has {} nodes but {total} chiplets must be placed", x * y),
                    ));
                }
            }
            (None, None) => {}
            _ => d.push(Diagnostic::new("nop.mesh_x", "mesh_x and mesh_y must be given together")),
        }
        let needed = config.dcim_buffer_needed(spec);
        if needed > c.buffer_bytes {
            d.push(Diagnostic::new(
                "dcim.buffer_bytes",
                format!("{} bytes cannot hold Q/K/V of the assigned heads ({needed} needed)", c.buffer_bytes),
            ));
        }
    }

    if d.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(d))
    }
}

/// Chiplet positions on the mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Floorplan {
    pub mesh_x: u32,
    pub mesh_y: u32,
    pub idp: crate::nop::MeshCoord,
    pub dcim: Vec<crate::nop::MeshCoord>,
    pub acim: Vec<crate::nop::MeshCoord>,
}

impl Floorplan {
    /// IDP at the grid center, DCIM on the nearest free nodes, then ACIM by
    /// increasing distance to the IDP. Ties are broken row-major.
    pub fn new(mesh_x: u32, mesh_y: u32, n_acim: u32, n_dcim: u32) -> Result<Self> {
        use crate::nop::{route_hops, MeshCoord};
        let total = n_acim as u64 + n_dcim as u64 + 1;
        if (mesh_x as u64) * (mesh_y as u64) < total {
            return Err(Error::Config(vec![Diagnostic::new(
                "nop.mesh_x",
                format!("mesh {mesh_x}x{mesh_y} cannot hold {total} chiplets"),
            )]));
        }
        let idp = MeshCoord::new((mesh_x - 1) / 2, (mesh_y - 1) / 2);
        let mut free: Vec<MeshCoord> = (0..mesh_y)
            .flat_map(|y| (0..mesh_x).map(move |x| MeshCoord::new(x, y)))
            .filter(|c| *c != idp)
            .collect();
        free.sort_by_key(|c| (route_hops(idp, *c), c.y, c.x));
        let dcim = free[..n_dcim as usize].to_vec();
        let acim = free[n_dcim as usize..(n_dcim + n_acim) as usize].to_vec();
        Ok(Self {
            mesh_x,
            mesh_y,
            idp,
            dcim,
            acim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sa() -> AcimConfig {
        AcimConfig {
            pe_per_chiplet: 1,
            sa_per_pe: 1,
            ..SystemConfig::reference().acim
        }
    }

    #[test]
    fn capacity_single_subarray() {
        assert_eq!(acim_capacity(&one_sa(), 8), 4096);
        let raw = AcimConfig { cell_bits: 8, ..one_sa() };
        assert_eq!(acim_capacity(&raw, 8), 128 * 128);
    }

    #[test]
    fn capacity_a32_closed_form_vs_loop() {
        let a = SystemConfig::reference().with_chiplet_sizes(32, 16).acim;
        let mut looped = 0u64;
        for _pe in 0..a.pe_per_chiplet {
            for _sa in 0..a.sa_per_pe {
                looped += (a.sa_rows * a.sa_cols / a.slices(8)) as u64;
            }
        }
        assert_eq!(acim_capacity(&a, 8), 7_864_320);
        assert_eq!(acim_capacity(&a, 8), looped);
    }

    #[test]
    fn capacity_monotone_in_geometry() {
        let base = SystemConfig::reference().acim;
        let c0 = acim_capacity(&base, 8);
        for bump in [
            AcimConfig { pe_per_chiplet: base.pe_per_chiplet + 1, ..base.clone() },
            AcimConfig { sa_per_pe: base.sa_per_pe + 1, ..base.clone() },
            AcimConfig { sa_rows: base.sa_rows + 1, ..base.clone() },
            AcimConfig { sa_cols: base.sa_cols + 8, ..base.clone() },
            AcimConfig { cell_bits: base.cell_bits + 1, ..base.clone() },
        ] {
            assert!(acim_capacity(&bump, 8) >= c0);
        }
    }

    #[test]
    fn required_chiplets() {
        let a32 = SystemConfig::reference().with_chiplet_sizes(32, 16).acim;
        assert_eq!(required_acim_chiplets(&ViTModelSpec::vit_b16(), &a32).unwrap(), 11);
        let toy = ViTModelSpec::new("toy", 64, 64, 1, 1, 4);
        assert_eq!(required_acim_chiplets(&toy, &a32).unwrap(), 1);
        // independent recomputation for ViT-L on A18
        let a18 = SystemConfig::reference().with_chiplet_sizes(18, 9).acim;
        let weights: u64 = ViTModelSpec::vit_l16().static_layers().iter().map(|l| l.rows as u64 * l.cols as u64).sum();
        let per_chiplet = 18u64 * 60 * 128 * 128 / 4;
        assert_eq!(
            required_acim_chiplets(&ViTModelSpec::vit_l16(), &a18).unwrap(),
            weights.div_ceil(per_chiplet)
        );
    }

    #[test]
    fn reference_validates_for_all_models() {
        let cfg = SystemConfig::reference();
        for spec in ViTModelSpec::table() {
            for (a, dd) in [(18, 9), (32, 16), (50, 25)] {
                validate(&cfg.clone().with_chiplet_sizes(a, dd), &spec).unwrap();
            }
        }
    }

    #[test]
    fn small_mesh_is_reported_on_mesh_x() {
        let mut cfg = SystemConfig::reference();
        cfg.nop.mesh_x = Some(2);
        cfg.nop.mesh_y = Some(2);
        let err = validate(&cfg, &ViTModelSpec::vit_b16()).unwrap_err();
        match err {
            Error::Config(d) => assert!(d.iter().any(|x| x.path == "nop.mesh_x")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn every_violation_reported_with_path() {
        let mut cfg = SystemConfig::reference();
        cfg.acim.group_size = 7;
        cfg.acim.t_adc_ns = 0.0;
        cfg.dcim.buffer_bytes = 16;
        cfg.system.n_acim_chiplets = Some(1);
        let Error::Config(d) = validate(&cfg, &ViTModelSpec::vit_b16()).unwrap_err() else {
            panic!()
        };
        let paths: Vec<_> = d.iter().map(|x| x.path.as_str()).collect();
        assert!(paths.contains(&"acim.group_size"));
        assert!(paths.contains(&"acim.t_adc_ns"));
        // structural errors short-circuit the capacity checks
        assert!(!paths.contains(&"dcim.buffer_bytes"));

        let mut cfg = SystemConfig::reference();
        cfg.dcim.buffer_bytes = 16;
        cfg.system.n_acim_chiplets = Some(1);
        let Error::Config(d) = validate(&cfg, &ViTModelSpec::vit_b16()).unwrap_err() else {
            panic!()
        };
        let paths: Vec<_> = d.iter().map(|x| x.path.as_str()).collect();
        assert_eq!(paths, vec!["system.n_acim_chiplets", "dcim.buffer_bytes"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{REFERENCE_TOML}\n[extra]\nfoo = 1\n");
        assert!(ConfigFile::from_toml_str(&text).is_err());
        let text = REFERENCE_TOML.replace("group_size = 8", "group_size = 8\ngroup_sz = 8");
        assert!(ConfigFile::from_toml_str(&text).is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let mut cfg = ConfigFile::reference();
        cfg.model = Some(ViTModelSpec::vit_l16());
        cfg.nop.mesh_x = Some(9);
        cfg.nop.mesh_y = Some(8);
        let back = ConfigFile::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ConfigFile::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn floorplan_places_idp_center_and_dcim_adjacent() {
        let fp = Floorplan::new(5, 5, 20, 2).unwrap();
        assert_eq!(fp.idp, crate::nop::MeshCoord::new(2, 2));
        for c in &fp.dcim {
            assert_eq!(crate::nop::route_hops(fp.idp, *c), 1);
        }
        let mut all = fp.acim.clone();
        all.extend(&fp.dcim);
        all.push(fp.idp);
        all.sort_by_key(|c| (c.y, c.x));
        all.dedup();
        assert_eq!(all.len(), 23);
        assert!(Floorplan::new(2, 2, 3, 1).is_err());
    }

    #[test]
    fn auto_mesh_holds_everything() {
        for n in 1..200 {
            let (x, y) = auto_mesh(n);
            assert!(x * y >= n);
            assert!(x.abs_diff(y) <= 1);
        }
    }
}
