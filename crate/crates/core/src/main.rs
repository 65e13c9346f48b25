use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use privsynth::accountant::{calibrate_sigma1, composite_epsilon, default_orders, PrivacyBudget};
use privsynth::data::{load_dataset, save_dataset};
use privsynth::generative::{read_model, write_model};
use privsynth::nn::{read_net, write_net};
use privsynth::pipeline::{
    build_report, description_from_text, description_to_text, dry_run, load_inputs, model_spec, plan,
    run_pipeline, stage_finetune, stage_pretrain, stage_query, stage_select, stage_synth, stage_train_sqf,
    write_run, AtStage, PipelineConfig, PipelineError, RunFiles, Stage,
};

#[derive(Parser)]
#[command(name = "privsynth", version, about = "Private synthetic data with semantic-aware pretraining")]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (overrides `output`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the privacy plan and the selection, then stop
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate sigma1 for a budget, or report epsilon for a given sigma1
    Account {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        sample_rate: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        sigma1: Option<f64>,
    },
    /// Train the semantic query function on public data
    TrainSqf,
    /// Release the noisy semantic distribution of the sensitive data
    QuerySd,
    /// Choose semantics and the public pretraining subset
    Select,
    /// Pretrain the generative model on the selected subset
    Pretrain {
        /// Pretraining epochs
        #[arg(long)]
        steps: Option<usize>,
    },
    /// DP fine-tune the pretrained model on the sensitive data
    Finetune {
        /// DP-SGD steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample synthetic records from the fine-tuned model
    Synth {
        /// Sampler steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the synthetic records and write the report
    Eval,
    /// Run every stage in order
    Run,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).at(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(privsynth::Error::Config(format!("`--set {kv}`: expected key=value"))).at(Stage::Config);
        };
        cfg.set(k.trim(), v.trim()).at(Stage::Config)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    match cli.command {
        Command::Pretrain { steps: Some(n) } => cfg.pretrain_epochs = n,
        Command::Finetune { steps: Some(n) } => cfg.steps = n,
        Command::Synth { steps: Some(n) } => cfg.sampler_steps = n,
        _ => {}
    }
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn io<T>(r: std::io::Result<T>, stage: Stage) -> Result<T, PipelineError> {
    r.map_err(privsynth::Error::from).at(stage)
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Account {
        epsilon,
        delta,
        steps,
        sample_rate,
        sigma2,
        sigma1,
    } = cli.command
    {
        let orders = default_orders();
        match sigma1 {
            Some(s1) => {
                let g = composite_epsilon(&orders, delta, steps, sample_rate, s1, sigma2).at(Stage::Calibrate)?;
                println!("epsilon={} delta={delta:e} order={}", g.epsilon, g.order);
                if g.epsilon > epsilon {
                    println!("over budget: target epsilon {epsilon}");
                }
            }
            None => {
                let budget = PrivacyBudget::new(epsilon, delta).at(Stage::Calibrate)?;
                let c = calibrate_sigma1(&budget, steps, sample_rate, sigma2, &orders).at(Stage::Calibrate)?;
                println!("sigma1={} epsilon={} order={}", c.sigma1, c.epsilon, c.order);
            }
        }
        return Ok(());
    }

    let cfg = load_config(cli)?;
    if cli.dry_run {
        let d = dry_run(&cfg)?;
        print!("{}", d.text);
        return Ok(());
    }
    let files = RunFiles::new(&cfg.output);
    files.create().at(Stage::Output)?;
    io(fs::write(files.config(), cfg.to_text()), Stage::Output)?;

    match cli.command {
        Command::Account { .. } => unreachable!(),
        Command::Run => {
            let out = run_pipeline(&cfg)?;
            write_run(&cfg.output, &out).at(Stage::Output)?;
            print!("{}", out.report.to_text());
            println!("artifacts in {}", cfg.output.display());
        }
        Command::TrainSqf => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let sqf = stage_train_sqf(&cfg, &inputs.public, &inputs.vocab).at(Stage::TrainSqf)?;
            write_net(files.sqf(), &sqf).at(Stage::Output)?;
            println!("wrote {}", files.sqf().display());
        }
        Command::QuerySd => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            plan(&cfg, inputs.sensitive.len()).at(Stage::Calibrate)?;
            let sqf = read_net(files.sqf()).at(Stage::QuerySd)?;
            // an earlier release in this run directory makes the charge fail
            let budget = privsynth::pipeline::budget(&cfg).at(Stage::Calibrate)?;
            let mut ledger = files
                .read_ledger(&default_orders(), cfg.delta)
                .and_then(|l| l.with_target(&budget))
                .at(Stage::QuerySd)?;
            let query = stage_query(&cfg, &sqf, &inputs.sensitive, &mut ledger).at(Stage::QuerySd)?;
            files.write_query(&query, &inputs.vocab).at(Stage::Output)?;
            files.write_ledger(&ledger).at(Stage::Output)?;
            println!("wrote {}", files.distribution().display());
        }
        Command::Select => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let query = files
                .read_query(cfg.k1(), inputs.sensitive.num_classes())
                .at(Stage::Select)?;
            let (desc, selection) = stage_select(&cfg, &query, &inputs.public).at(Stage::Select)?;
            io(fs::write(files.description(), description_to_text(&desc)), Stage::Output)?;
            save_dataset(files.selected(), &selection.data).at(Stage::Output)?;
            println!(
                "selected {} of {} public records",
                selection.data.len(),
                inputs.public.len()
            );
        }
        Command::Pretrain { .. } => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let selected = load_dataset(files.selected()).at(Stage::Pretrain)?;
            let spec = model_spec(&cfg, inputs.public.dim(), inputs.sensitive.num_classes());
            let model = stage_pretrain(&cfg, &selected, &spec).at(Stage::Pretrain)?;
            write_model(files.pretrained(), &model).at(Stage::Output)?;
            println!("wrote {}", files.pretrained().display());
        }
        Command::Finetune { .. } => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let p = plan(&cfg, inputs.sensitive.len()).at(Stage::Calibrate)?;
            let model = read_model(files.pretrained()).at(Stage::Finetune)?;
            let budget = privsynth::pipeline::budget(&cfg).at(Stage::Calibrate)?;
            let mut ledger = files
                .read_ledger(&default_orders(), cfg.delta)
                .and_then(|l| l.with_target(&budget))
                .at(Stage::Finetune)?;
            let tuned = stage_finetune(&cfg, &model, &inputs.sensitive, &p, &mut ledger).at(Stage::Finetune)?;
            write_model(files.finetuned(), &tuned).at(Stage::Output)?;
            files.write_ledger(&ledger).at(Stage::Output)?;
            println!("wrote {}", files.finetuned().display());
        }
        Command::Synth { .. } => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let model = read_model(files.finetuned()).at(Stage::Synth)?;
            let synthetic = stage_synth(&cfg, &model, inputs.sensitive.len()).at(Stage::Synth)?;
            files.write_synthetic(&synthetic).at(Stage::Output)?;
            println!("wrote {} records to {}", synthetic.len(), files.synthetic_csv().display());
        }
        Command::Eval => {
            let inputs = load_inputs(&cfg).at(Stage::Data)?;
            let p = plan(&cfg, inputs.sensitive.len()).at(Stage::Calibrate)?;
            let ledger = files.read_ledger(&default_orders(), cfg.delta).at(Stage::Eval)?;
            let query = files
                .read_query(cfg.k1(), inputs.sensitive.num_classes())
                .at(Stage::Eval)?;
            let desc = io(fs::read_to_string(files.description()), Stage::Eval)?;
            let desc = description_from_text(&desc).at(Stage::Eval)?;
            let selected = load_dataset(files.selected()).at(Stage::Eval)?;
            let synthetic = files.read_synthetic().at(Stage::Eval)?;
            let report = build_report(
                &cfg,
                &p,
                &ledger,
                &inputs.vocab,
                &desc,
                &selected,
                inputs.public.len(),
                &query,
                &synthetic,
                inputs.sensitive_test.as_ref(),
            )
            .at(Stage::Eval)?;
            io(fs::write(files.report_text(), report.to_text()), Stage::Output)?;
            io(fs::write(files.report_csv(), report.to_csv()), Stage::Output)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
