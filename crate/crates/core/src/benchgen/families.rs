//! Small WfCommons-shaped raw workflow documents for the ten benchmark families.

use serde_json::{json, Value};

pub const FAMILIES: [&str; 10] =
    ["1000genome", "blast", "bwa", "cycles", "montage", "nextflow", "rnaseq", "seismic", "soykb", "srasearch"];

#[derive(Default)]
struct Builder {
    tasks: Vec<(String, Vec<String>)>,
}

impl Builder {
    fn add(&mut self, name: String, parents: &[String]) -> String {
        self.tasks.push((name.clone(), parents.to_vec()));
        name
    }

    fn many(&mut self, prefix: &str, n: usize, parents: &[String]) -> Vec<String> {
        (0..n).map(|i| self.add(format!("{prefix}_{:08}", i + 1), parents)).collect()
    }

    fn document(self, style: usize) -> String {
        let list: Vec<Value> = self
            .tasks
            .iter()
            .map(|(n, ps)| match style {
                0 => json!({ "name": n, "id": n, "parents": ps, "type": "compute" }),
                _ => json!({ "name": n, "parents": ps, "runtimeInSeconds": 1.0 }),
            })
            .collect();
        let body = match style {
            0 => json!({ "name": "instance", "schemaVersion": "1.4", "workflow": { "specification": { "tasks": list } } }),
            1 => json!({ "name": "instance", "schemaVersion": "1.3", "workflow": { "tasks": list } }),
            _ => json!({ "name": "instance", "workflow": { "jobs": list } }),
        };
        serde_json::to_string_pretty(&body).expect("json")
    }
}

fn one(s: String) -> Vec<String> {
    vec![s]
}

/// Raw document for `family`; `variant` scales the number of parallel branches.
pub fn family_document(family: &str, variant: usize) -> Option<String> {
    let k = variant + 2;
    let mut b = Builder::default();
    let style = match family {
        "1000genome" => {
            for c in 0..k {
                let ind = b.many(&format!("individuals_chr{c}"), 3, &[]);
                let merge = b.add(format!("individuals_merge_chr{c}_00000001"), &ind);
                let sift = b.add(format!("sifting_chr{c}_00000001"), &[]);
                let both = vec![merge, sift];
                b.many(&format!("mutation_overlap_chr{c}"), 2, &both);
                b.many(&format!("frequency_chr{c}"), 2, &both);
            }
            0
        }
        "blast" => {
            let split = b.add("split_fasta_00000001".into(), &[]);
            let mut all = Vec::new();
            for d in 0..k {
                all.extend(b.many(&format!("blastall_db{d}"), 4, &one(split.clone())));
            }
            let cb = b.add("cat_blast_00000001".into(), &all);
            b.add("cat_00000001".into(), &all.iter().cloned().chain([cb]).collect::<Vec<_>>());
            1
        }
        "bwa" => {
            let reduce = b.add("fastq_reduce_00000001".into(), &[]);
            let index = b.add("bwa_index_00000001".into(), &[]);
            let mut all = Vec::new();
            for c in 0..k {
                all.extend(b.many(&format!("bwa_chunk{c}"), 3, &[reduce.clone(), index.clone()]));
            }
            let cat = b.add("cat_bwa_00000001".into(), &all);
            b.add("cat_00000001".into(), &one(cat));
            2
        }
        "cycles" => {
            let mut sums = Vec::new();
            for c in 0..k {
                let base = b.many(&format!("baseline_cycles_crop{c}"), 2, &[]);
                let cyc: Vec<String> =
                    base.iter().enumerate().map(|(i, p)| b.add(format!("cycles_crop{c}_{:08}", i + 1), &one(p.clone()))).collect();
                let fert: Vec<String> = cyc
                    .iter()
                    .enumerate()
                    .map(|(i, p)| b.add(format!("fertilizer_increase_output_crop{c}_{:08}", i + 1), &one(p.clone())))
                    .collect();
                sums.push(b.add(format!("cycles_output_summary_crop{c}"), &cyc));
                sums.push(b.add(format!("fertilizer_summary_crop{c}"), &fert));
            }
            b.add("cycles_plots_00000001".into(), &sums);
            0
        }
        "montage" => {
            for band in 0..(variant + 1) {
                let proj = b.many(&format!("mProject_b{band}"), 4, &[]);
                let diff: Vec<String> = (0..3)
                    .map(|i| b.add(format!("mDiffFit_b{band}_{:08}", i + 1), &[proj[i].clone(), proj[i + 1].clone()]))
                    .collect();
                let concat = b.add(format!("mConcatFit_b{band}"), &diff);
                let bg = b.add(format!("mBgModel_b{band}"), &one(concat));
                let back: Vec<String> = proj
                    .iter()
                    .enumerate()
                    .map(|(i, p)| b.add(format!("mBackground_b{band}_{:08}", i + 1), &[p.clone(), bg.clone()]))
                    .collect();
                let tbl = b.add(format!("mImgtbl_b{band}"), &back);
                let add = b.add(format!("mAdd_b{band}"), &one(tbl));
                let shrink = b.add(format!("mShrink_b{band}"), &one(add));
                b.add(format!("mViewer_b{band}"), &one(shrink));
            }
            1
        }
        "nextflow" => {
            let genome = b.add("prepare_genome_00000001".into(), &[]);
            let mut tails = Vec::new();
            for i in 0..4 {
                let qc = b.add(format!("fastqc_{:08}", i + 1), &[]);
                let trim = b.add(format!("trimgalore_{:08}", i + 1), &one(qc.clone()));
                let align = b.add(format!("align_{:08}", i + 1), &[trim, genome.clone()]);
                let dup = b.add(format!("markdup_{:08}", i + 1), &one(align));
                tails.push(qc);
                for t in 0..k {
                    tails.push(b.add(format!("variantcall_t{t}_{:08}", i + 1), &one(dup.clone())));
                }
            }
            b.add("multiqc_00000001".into(), &tails);
            2
        }
        "rnaseq" => {
            let mut quants = Vec::new();
            let mut tails = Vec::new();
            for i in 0..3 {
                let cat = b.add(format!("cat_fastq_{:08}", i + 1), &[]);
                let raw = b.add(format!("fastqc_raw_{:08}", i + 1), &one(cat.clone()));
                let trim = b.add(format!("trim_{:08}", i + 1), &one(cat));
                let star = b.add(format!("star_align_{:08}", i + 1), &one(trim));
                quants.push(b.add(format!("salmon_quant_{:08}", i + 1), &one(star.clone())));
                let sort = b.add(format!("samtools_sort_{:08}", i + 1), &one(star));
                tails.push(b.add(format!("stringtie_{:08}", i + 1), &one(sort.clone())));
                tails.push(raw);
                for m in 0..k {
                    tails.push(b.add(format!("rseqc_m{m}_{:08}", i + 1), &one(sort.clone())));
                }
            }
            let de = b.add("deseq2_qc_00000001".into(), &quants);
            tails.push(de);
            b.add("multiqc_00000001".into(), &tails);
            0
        }
        "seismic" => {
            let mut all = Vec::new();
            for s in 0..k {
                all.extend(b.many(&format!("sG1IterDecon_st{s}"), 4, &[]));
            }
            b.add("wrapper_siftSTFByMisfit_00000001".into(), &all);
            1
        }
        "soykb" => {
            let mut hcs = Vec::new();
            for i in 0..3 {
                let mut prev = b.add(format!("alignment_to_reference_{:08}", i + 1), &[]);
                for step in ["sort_sam", "dedup", "add_replace", "realign_target_creator", "indel_realign", "haplotype_caller"] {
                    prev = b.add(format!("{step}_{:08}", i + 1), &one(prev));
                }
                hcs.push(prev);
            }
            let geno: Vec<String> = (0..k).map(|c| b.add(format!("genotype_gvcfs_chr{c}"), &hcs)).collect();
            let comb = b.add("combine_variants_00000001".into(), &geno);
            let si = b.add("select_variants_indel_00000001".into(), &one(comb.clone()));
            b.add("filtering_indel_00000001".into(), &one(si));
            let ss = b.add("select_variants_snp_00000001".into(), &one(comb));
            b.add("filtering_snp_00000001".into(), &one(ss));
            2
        }
        "srasearch" => {
            let build = b.add("bowtie2-build-00000001".into(), &[]);
            let dumps = b.many("fasterq-dump", 3, &[]);
            let mut merges = Vec::new();
            for r in 0..k {
                let aligns: Vec<String> = dumps
                    .iter()
                    .enumerate()
                    .map(|(i, d)| b.add(format!("bowtie2_ref{r}_{:08}", i + 1), &[build.clone(), d.clone()]))
                    .collect();
                merges.push(b.add(format!("merge_ref{r}"), &aligns));
            }
            b.add("summary_00000001".into(), &merges);
            0
        }
        _ => return None,
    };
    Some(b.document(style))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{import_workflow_json, lift_dag, LiftParams};

    #[test]
    fn every_family_imports_and_lifts() {
        for f in FAMILIES {
            for v in 0..4 {
                let doc = family_document(f, v).unwrap();
                let raw = import_workflow_json(&doc, &format!("{f}-{v}")).unwrap();
                let dag = lift_dag(&raw, &LiftParams::default()).unwrap();
                assert!(dag.len() >= 6 && dag.len() <= 64, "{f}-{v}: {}", dag.len());
                assert!(dag.topo_order().is_some());
            }
        }
        assert!(family_document("nope", 0).is_none());
    }
}
