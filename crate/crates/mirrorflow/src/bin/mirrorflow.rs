use mirrorflow::runner;

fn main() {
    std::process::exit(runner::main_from_args(std::env::args_os()));
}
