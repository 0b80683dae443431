from lamwave_pkg.main import main

if __name__ == '__main__':
    main()
