use crate::error::{Error, Result};
use crate::models::{GeneratorModel, GeneratorNodes};
use crate::tensor::{Graph, NodeId, Tensor};

/// One additive tensor per generator layer output `O_0..O_n`; `O_0` is the
/// latent input.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    sites: Vec<Tensor>,
}

impl Perturbation {
    pub fn zeros(g: &GeneratorModel) -> Self {
        Perturbation {
            sites: g.site_widths().into_iter().map(|w| Tensor::zeros(&[w])).collect(),
        }
    }

    /// Validates shapes against `g`'s layer outputs.
    pub fn from_sites(g: &GeneratorModel, sites: Vec<Tensor>) -> Result<Self> {
        let widths = g.site_widths();
        if sites.len() != widths.len() {
            return Err(Error::InvalidConfig(format!(
                "perturbation has {} sites, generator has {}",
                sites.len(),
                widths.len()
            )));
        }
        for (site, (t, &w)) in sites.iter().zip(&widths).enumerate() {
            if t.shape() != [w] {
                return Err(Error::PerturbationShape {
                    site,
                    expected: vec![w],
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(Perturbation { sites })
    }

    /// Wraps per-site vectors without a generator to check widths against.
    pub fn from_vectors(sites: Vec<Tensor>) -> Result<Self> {
        if let Some((site, t)) = sites.iter().enumerate().find(|(_, t)| t.rank() != 1) {
            return Err(Error::PerturbationShape {
                site,
                expected: vec![t.len()],
                actual: t.shape().to_vec(),
            });
        }
        Ok(Perturbation { sites })
    }

    pub fn sites(&self) -> &[Tensor] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Option<&Tensor> {
        self.sites.get(i)
    }

    pub fn into_sites(self) -> Vec<Tensor> {
        self.sites
    }

    pub(crate) fn site_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.sites[i]
    }

    /// l2 norm of all elements flattened into one vector.
    pub fn flattened_norm(&self) -> f64 {
        self.sites
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Perturbation {
            sites: self.sites.iter().map(|t| t.scale(alpha)).collect(),
        }
    }

    /// Sites holding at least one nonzero element.
    pub fn active_sites(&self) -> Vec<usize> {
        (0..self.sites.len())
            .filter(|&i| self.sites[i].data().iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// `d(p) = ||p||_2 < eps`.
pub fn similarity_holds(p: &Perturbation, epsilon: f64) -> bool {
    p.flattened_norm() < epsilon
}

fn check(g: &GeneratorModel, p: &Perturbation) -> Result<()> {
    for (site, (t, w)) in p.sites.iter().zip(g.site_widths()).enumerate() {
        if t.shape() != [w] {
            return Err(Error::PerturbationShape {
                site,
                expected: vec![w],
                actual: t.shape().to_vec(),
            });
        }
    }
    if p.sites.len() != g.site_widths().len() {
        return Err(Error::PerturbationShape {
            site: p.sites.len().min(g.site_widths().len()),
            expected: vec![g.site_widths().len()],
            actual: vec![p.sites.len()],
        });
    }
    Ok(())
}

/// Adds `p` elementwise, skipping zeros so an all-zero site leaves `o`
/// bit-identical.
fn add_site(o: &mut Tensor, p: &Tensor) {
    for (v, &d) in o.data_mut().iter_mut().zip(p.data()) {
        if d != 0.0 {
            *v += d;
        }
    }
}

/// Evaluates the generator with each layer output shifted by `p`.
pub fn perturbed_forward(g: &GeneratorModel, z: &Tensor, y: usize, p: &Perturbation) -> Result<Tensor> {
    check(g, p)?;
    let mut z0 = z.clone();
    add_site(&mut z0, &p.sites[0]);
    let mut h = g.input_row(&z0, y)?;
    for (i, layer) in g.layers().iter().enumerate() {
        let mut pre = layer.pre_activation(&h)?;
        add_site(&mut pre, &p.sites[i + 1]);
        h = layer.activate(&pre);
    }
    h.reshape(&g.image_shape())
}

/// Graph form of [`perturbed_forward`] for one latent. Returns the generator
/// nodes and one variable per site listed in `active` (in that order).
pub fn perturbed_graph(
    graph: &mut Graph,
    g: &GeneratorModel,
    z: &Tensor,
    y: usize,
    p: &Perturbation,
    active: &[usize],
) -> Result<(GeneratorNodes, Vec<NodeId>)> {
    check(g, p)?;
    let mut slots: Vec<Option<NodeId>> = vec![None; p.sites.len()];
    let mut vars = Vec::with_capacity(active.len());
    for &i in active {
        let site = p.sites.get(i).ok_or(Error::IndexOutOfRange {
            op: "perturbation site",
            index: i,
            len: p.sites.len(),
        })?;
        let v = graph.variable(site.reshape(&[1, site.len()])?);
        slots[i] = Some(v);
        vars.push(v);
    }
    let zn = graph.constant(z.reshape(&[1, z.len()])?);
    let nodes = g.build(graph, zn, &[y], &slots, false)?;
    Ok((nodes, vars))
}
