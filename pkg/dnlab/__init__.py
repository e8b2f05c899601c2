# Django project init file
