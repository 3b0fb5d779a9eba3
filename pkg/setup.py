import setuptools

setuptools.setup(
    name='dlsphere',
    version = '1.0',
    author = 'Jacob Zimmerman',
    author_email = 'jacobz_20@yahoo.com',
    description = 'Sphere decoding for MIMO detection with search radii learned by a dense network',
    packages = setuptools.find_packages(exclude=['dist', 'dlsphere.egg-info', 'build', 'tests']),
    classifiers = [
        'Programming Language :: Python :: 3.8',
        'Operating System :: OS Independent',],
    python_requires = '>=3.8',
    install_requires=['numpy', 'scipy'],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['dlsphere=dlsphere.cli:main']},
)
