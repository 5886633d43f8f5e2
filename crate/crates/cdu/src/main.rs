use clap::Parser;

fn main() {
    let cli = cdu::cli::Cli::parse();
    match cdu::cli::run(&cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
